#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mmkd/network.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

enum class KdMethod {
  None,
  CrdFinal,
  CrdPenultimate,
  CrdPostAttention,
  CrdAttentionMap,
  EdamSDown,
  EdamTUp,
};

enum class Alignment { None, SDown, TUp };

const char* kd_method_name(KdMethod m);  // "none", "crd_final", ...
KdMethod kd_method_from_name(const std::string& name);
/// Alignment used by a method's attention-map losses.
Alignment alignment_for(KdMethod m);

struct DistillLossConfig {
  double alpha = 1.0;
  double beta = 1.0;
  double temperature = 1.0;      // EDAM softmax temperature
  double crd_temperature = 0.1;  // contrastive logit temperature
  std::size_t crd_dim = 16;
  double epsilon = 1e-8;  // log floor for EDAM

  void validate() const;
};

using StackPair = std::pair<TransformerId, TransformerId>;  // (student, teacher)

// ---------------------------------------------------------------------------
// Reference (non-differentiable) formulas on plain vectors.

/// -log(exp(s.t_pos/tau) / (exp(s.t_pos/tau) + sum_k exp(s.t_neg_k/tau))).
/// `negatives` holds N vectors of the same width back to back.
double crd_loss(std::span<const double> s, std::span<const double> t_pos, std::span<const double> negatives,
                double tau);

/// F(a, b) = -sum_k a_k log(b_k + eps).
double edam_row_cross_entropy(std::span<const double> a, std::span<const double> b, double eps);

// ---------------------------------------------------------------------------
// Differentiable losses.

/// In-batch contrastive loss between unit-norm rows of student [N, d] and
/// teacher [N, d]: row i's positive is teacher row i, the other N-1 rows are
/// its negatives. Mean over rows.
Tensor crd_batch_loss(const Tensor& student, const Tensor& teacher, double tau);

/// Same as crd_batch_loss for a stack of G independent groups [G, N, d];
/// mean over all G*N rows.
Tensor crd_grouped_loss(const Tensor& student, const Tensor& teacher, double tau);

/// Affine projection to the contrastive space followed by unit normalization.
struct CrdProjection {
  Tensor w;
  Tensor b;
  Tensor apply(const Tensor& x) const;
};

/// Row/column maps for upsampling teacher maps: aligned = norm(relu(R M C)).
struct UpsampleMap {
  Tensor rows;  // [m_student, m_teacher]
  Tensor cols;  // [n_teacher, n_student]
};

/// Linear-interpolation matrix [out, in] (rows sum to one).
Tensor interpolation_matrix(std::size_t out, std::size_t in);

/// Trainable state owned by a student run: contrastive projections per site
/// and side, and upsampling maps. The teacher itself is never modified.
class DistillState {
 public:
  DistillState() = default;
  DistillState(KdMethod method, const std::vector<StackPair>& pairs, const Network& student,
               const Network& teacher, const DistillLossConfig& cfg, std::uint64_t seed);

  KdMethod method() const { return method_; }
  const std::vector<StackPair>& pairs() const { return pairs_; }
  const CrdProjection& student_projection(std::size_t slot) const { return student_proj_.at(slot); }
  const CrdProjection& teacher_projection(std::size_t slot) const { return teacher_proj_.at(slot); }
  const UpsampleMap& upsample(std::size_t pair) const { return upsample_.at(pair); }
  bool has_upsample() const { return !upsample_.empty(); }
  ParamList parameters() const;

 private:
  KdMethod method_ = KdMethod::None;
  std::vector<StackPair> pairs_;
  std::vector<CrdProjection> student_proj_;  // one per pair, or one for final/penultimate
  std::vector<CrdProjection> teacher_proj_;
  std::vector<UpsampleMap> upsample_;
};

enum class FeatureSite { Final, Penultimate };

/// Contrastive loss on the head's final or penultimate features.
Tensor kd_layer_crd(FeatureSite site, const ForwardTrace& student, const ForwardTrace& teacher,
                    const DistillState& state, const DistillLossConfig& cfg);

/// Per pair: mean over layers of the contrastive loss on time-pooled
/// post-attention features; then mean over pairs.
Tensor kd_postattn_crd(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                       const DistillLossConfig& cfg);

/// Per pair: contrastive loss on every attention-map row of every layer,
/// averaged by 1/(m l); then mean over pairs.
Tensor kd_attnmap_crd(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                      const DistillLossConfig& cfg);

/// Paired maps of every layer, shape-equal after alignment. For TUp the
/// teacher maps pass through the learned upsampling of `state`.
struct AlignedMaps {
  std::vector<Tensor> student;  // per layer [B, m, n]
  std::vector<Tensor> teacher;
};

std::vector<AlignedMaps> align_attention(const ForwardTrace& student, const ForwardTrace& teacher,
                                         const DistillState& state, Alignment mode, double temperature);

/// Upsample one batch of teacher maps [B, m_t, n_t] to [B, m_s, n_s].
Tensor upsample_map(const Tensor& teacher_map, const UpsampleMap& up);

/// Row-wise cross-entropy with the teacher row as the target distribution:
/// per pair (1/(m l)) sum over layers and rows of F(teacher_row, student_row),
/// averaged over the batch, then over pairs.
Tensor edam_loss(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                 Alignment mode, const DistillLossConfig& cfg);

/// Dispatches to the loss of `state.method()`; zero scalar for None.
Tensor distillation_loss(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                         const DistillLossConfig& cfg);

struct LossBreakdown {
  Tensor total;  // differentiable alpha * L_c + beta * L_KD
  double classification = 0.0;
  double distillation = 0.0;
  double value = 0.0;
};

LossBreakdown total_loss(const Tensor& classification, const Tensor& distillation, double alpha, double beta);

}  // namespace MMKD_ABI
}  // namespace mmkd
