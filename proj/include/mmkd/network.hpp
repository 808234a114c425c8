#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmkd/blocks.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

enum class Modality { Video = 0, Audio = 1, Language = 2 };
enum class Side { Student, Teacher };
enum class Role { Teacher, Student };
enum class TeacherBranch { Complete, Video, Audio, Language };

inline constexpr std::array<Modality, 3> kModalities{Modality::Video, Modality::Audio, Modality::Language};
inline constexpr std::size_t kNumClasses = 7;

char modality_letter(Modality m);
const char* modality_name(Modality m);  // "video", "audio", "language"
Modality modality_from_name(const std::string& name);
const char* branch_name(TeacherBranch b);  // "complete", "video", ...
TeacherBranch branch_from_name(const std::string& name);

/// Names one transformer stack. In "Y<-X" notation X is the query stream and
/// Y supplies keys and values, so `key_value` = Y and `query` = X. Fusion
/// stacks are self-attention over a branch output and are keyed by the
/// branch's query modality.
struct TransformerId {
  Modality key_value = Modality::Video;
  Modality query = Modality::Video;
  Side side = Side::Teacher;
  bool fusion = false;

  std::string str() const;
  TransformerId on_side(Side s) const { return {key_value, query, s, fusion}; }
  bool self_attention() const { return fusion || key_value == query; }
  auto operator<=>(const TransformerId&) const = default;
};

struct ModalityShape {
  std::size_t steps = 0;
  std::size_t width = 0;
};

struct NetworkConfig {
  std::size_t d_model = 16;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t ffn_ratio = 4;
  std::size_t head_hidden = 32;
  std::size_t conv_kernel = 3;
  std::size_t num_classes = kNumClasses;
  std::array<ModalityShape, 3> modalities{};  // indexed by Modality
  /// Student A_S / L_S front-ends stride down to the teacher's audio and
  /// language lengths. Off for attention-map upsampling runs.
  bool student_downsample = true;

  const ModalityShape& shape(Modality m) const { return modalities[static_cast<std::size_t>(m)]; }
  ModalityShape& shape(Modality m) { return modalities[static_cast<std::size_t>(m)]; }
  void validate() const;

  /// D_V=8, D_A=12, D_L=16, T_V=24, T_A=12, T_L=6, d_model=16.
  static NetworkConfig desk();
  /// Feature widths of the original features (35 / 74 / 300), d_model=40,
  /// 4 layers, 8 heads.
  static NetworkConfig paper();
};

struct FrontEnd {
  Modality input = Modality::Video;   // dataset modality consumed
  Modality stream = Modality::Video;  // stream it produces (A_S for a student proxy)
  std::size_t stride = 1;
  Tensor weight;  // [k, D_in, d_model]
  Tensor bias;
};

struct Stack {
  TransformerId id;
  std::vector<TransformerLayerParams> layers;
  std::size_t width = 0;
};

struct ClassifierHead {
  Tensor w1, b1, w2, b2;
};

struct ParamBreakdown {
  std::size_t front_ends = 0;
  std::size_t cross_stacks = 0;
  std::size_t fusion_stacks = 0;
  std::size_t head = 0;
  std::size_t total() const { return front_ends + cross_stacks + fusion_stacks + head; }
};

/// Per-modality input tensors [B, T_m, D_m].
using Batch = std::map<Modality, Tensor>;

struct ForwardTrace {
  Tensor logits;            // [B, C]
  Tensor penultimate_feat;  // first head layer output after its nonlinearity
  Tensor final_feat;        // second head layer output (the logits)
  std::map<TransformerId, AttentionTrace> traces;

  const AttentionTrace& trace(const TransformerId& id) const;
};

/// A teacher or student assembly. Teachers take all three modalities; students
/// take only video and derive A_S / L_S proxies with their own front-ends.
class Network {
 public:
  Role role() const { return role_; }
  TeacherBranch branch() const { return branch_; }
  int student_config() const { return student_config_; }
  const NetworkConfig& config() const { return cfg_; }
  Side side() const { return role_ == Role::Teacher ? Side::Teacher : Side::Student; }

  const std::vector<FrontEnd>& front_ends() const { return front_ends_; }
  const std::vector<Stack>& cross_stacks() const { return cross_; }
  const std::vector<Stack>& fusion_stacks() const { return fusion_; }
  std::size_t stack_count() const { return cross_.size() + fusion_.size(); }
  std::vector<TransformerId> stack_ids() const;
  const Stack& stack(const TransformerId& id) const;

  /// Modalities the forward pass expects in its batch.
  std::vector<Modality> inputs() const;
  /// Sequence length of a stream after its front-end.
  std::size_t stream_steps(Modality stream) const;
  /// Attention map shape (rows = query steps, cols = key steps) of a stack.
  std::pair<std::size_t, std::size_t> map_shape(const TransformerId& id) const;

  ParamList parameters() const;
  ParamBreakdown param_breakdown() const;
  std::size_t param_count() const { return param_breakdown().total(); }

  /// Marks every parameter trainable or frozen.
  void set_trainable(bool on);

  /// Short description such as "teacher/complete" or "student/5".
  std::string label() const;

  friend Network build_teacher(TeacherBranch, const NetworkConfig&, std::uint64_t);
  friend Network build_student(int, const NetworkConfig&, std::uint64_t);

 private:
  Role role_ = Role::Teacher;
  TeacherBranch branch_ = TeacherBranch::Complete;
  int student_config_ = 0;
  NetworkConfig cfg_;
  std::vector<FrontEnd> front_ends_;
  std::vector<Stack> cross_;
  std::vector<Stack> fusion_;
  ClassifierHead head_;

  friend ForwardTrace network_forward(const Network& net, const Batch& batch);
};

Network build_teacher(TeacherBranch branch, const NetworkConfig& cfg, std::uint64_t seed);
Network build_student(int config, const NetworkConfig& cfg, std::uint64_t seed);

ForwardTrace network_forward(const Network& net, const Batch& batch);

/// Teacher branch a student configuration distills from.
TeacherBranch teacher_for_config(int config);

/// (student stack, teacher stack) pairs used for attention-level distillation.
std::vector<std::pair<TransformerId, TransformerId>> pair_map(int config);

/// FNV-1a hash over parameter bytes, for freeze checks.
std::uint64_t parameter_hash(const Network& net);

}  // namespace MMKD_ABI
}  // namespace mmkd
