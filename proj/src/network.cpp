#include "mmkd/network.hpp"

#include <algorithm>
#include <cstring>

#include "mmkd/ops.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

char modality_letter(Modality m) {
  switch (m) {
    case Modality::Video: return 'V';
    case Modality::Audio: return 'A';
    case Modality::Language: return 'L';
  }
  return '?';
}

const char* modality_name(Modality m) {
  switch (m) {
    case Modality::Video: return "video";
    case Modality::Audio: return "audio";
    case Modality::Language: return "language";
  }
  return "?";
}

Modality modality_from_name(const std::string& name) {
  for (auto m : kModalities)
    if (name == modality_name(m)) return m;
  throw Error(ErrorKind::Config, "unknown modality '" + name + "'");
}

const char* branch_name(TeacherBranch b) {
  switch (b) {
    case TeacherBranch::Complete: return "complete";
    case TeacherBranch::Video: return "video";
    case TeacherBranch::Audio: return "audio";
    case TeacherBranch::Language: return "language";
  }
  return "?";
}

TeacherBranch branch_from_name(const std::string& name) {
  for (auto b : {TeacherBranch::Complete, TeacherBranch::Video, TeacherBranch::Audio, TeacherBranch::Language})
    if (name == branch_name(b)) return b;
  throw Error(ErrorKind::Config, "unknown teacher branch '" + name + "'");
}

std::string TransformerId::str() const {
  const char s = side == Side::Teacher ? 'T' : 'S';
  if (fusion) return std::string("fusion(") + modality_letter(query) + '_' + s + ')';
  return std::string() + modality_letter(key_value) + '_' + s + "<-" + modality_letter(query) + '_' + s;
}

void NetworkConfig::validate() const {
  if (d_model == 0 || heads == 0 || d_model % heads != 0) {
    throw Error(ErrorKind::Config, "d_model " + std::to_string(d_model) + " must be a positive multiple of heads " +
                                       std::to_string(heads));
  }
  if (d_model % 2 != 0) throw Error(ErrorKind::Config, "d_model must be even for positional embeddings");
  if (layers == 0 || ffn_ratio == 0 || head_hidden == 0 || conv_kernel == 0 || num_classes == 0) {
    throw Error(ErrorKind::Config, "layers, ffn_ratio, head_hidden, conv_kernel and num_classes must be positive");
  }
  for (auto m : kModalities) {
    if (shape(m).steps == 0 || shape(m).width == 0) {
      throw Error(ErrorKind::Config, std::string("modality ") + modality_name(m) + " needs positive steps and width");
    }
  }
}

NetworkConfig NetworkConfig::desk() {
  NetworkConfig c;
  c.d_model = 16;
  c.heads = 4;
  c.layers = 2;
  c.head_hidden = 32;
  c.shape(Modality::Video) = {24, 8};
  c.shape(Modality::Audio) = {12, 12};
  c.shape(Modality::Language) = {6, 16};
  return c;
}

NetworkConfig NetworkConfig::paper() {
  NetworkConfig c;
  c.d_model = 40;
  c.heads = 8;
  c.layers = 4;
  c.head_hidden = 4096;
  c.shape(Modality::Video) = {500, 35};
  c.shape(Modality::Audio) = {500, 74};
  c.shape(Modality::Language) = {50, 300};
  return c;
}

namespace {

std::vector<TransformerLayerParams> init_layers(Rng& rng, const NetworkConfig& cfg, std::size_t width) {
  std::vector<TransformerLayerParams> layers;
  for (std::size_t i = 0; i < cfg.layers; ++i)
    layers.push_back(TransformerLayerParams::init(rng, width, cfg.heads, cfg.ffn_ratio));
  return layers;
}

FrontEnd init_front_end(Rng& rng, const NetworkConfig& cfg, Modality input, Modality stream, std::size_t stride) {
  FrontEnd f;
  f.input = input;
  f.stream = stream;
  f.stride = stride;
  const std::size_t din = cfg.shape(input).width;
  f.weight = glorot(rng, cfg.conv_kernel * din, cfg.d_model, {cfg.conv_kernel, din, cfg.d_model});
  f.bias = Tensor::zeros({cfg.d_model}, true);
  return f;
}

// Cross stacks of one branch, in order: the branch modality is the query.
std::vector<TransformerId> branch_cross_ids(Modality query, Side side) {
  std::vector<TransformerId> ids;
  for (auto kv : kModalities)
    if (kv != query) ids.push_back({kv, query, side, false});
  return ids;
}

std::vector<Modality> branch_queries(TeacherBranch b) {
  switch (b) {
    case TeacherBranch::Complete: return {Modality::Video, Modality::Audio, Modality::Language};
    case TeacherBranch::Video: return {Modality::Video};
    case TeacherBranch::Audio: return {Modality::Audio};
    case TeacherBranch::Language: return {Modality::Language};
  }
  return {};
}

void build_branches(Rng& rng, const NetworkConfig& cfg, Side side, const std::vector<Modality>& queries,
                    std::vector<Stack>& cross, std::vector<Stack>& fusion) {
  for (auto q : queries)
    for (const auto& id : branch_cross_ids(q, side)) cross.push_back({id, init_layers(rng, cfg, cfg.d_model), cfg.d_model});
  for (auto q : queries) {
    const std::size_t width = 2 * cfg.d_model;
    fusion.push_back({TransformerId{q, q, side, true}, init_layers(rng, cfg, width), width});
  }
}

ClassifierHead init_head(Rng& rng, const NetworkConfig& cfg, std::size_t in) {
  ClassifierHead h;
  h.w1 = glorot(rng, in, cfg.head_hidden, {in, cfg.head_hidden});
  h.b1 = Tensor::zeros({cfg.head_hidden}, true);
  h.w2 = glorot(rng, cfg.head_hidden, cfg.num_classes, {cfg.head_hidden, cfg.num_classes});
  h.b2 = Tensor::zeros({cfg.num_classes}, true);
  return h;
}

std::size_t downsample_stride(const NetworkConfig& cfg, Modality target) {
  const std::size_t tv = cfg.shape(Modality::Video).steps;
  const std::size_t tt = cfg.shape(target).steps;
  if (tt == 0 || tv % tt != 0) {
    throw Error(ErrorKind::Config, "cannot stride video length " + std::to_string(tv) + " down to " +
                                       modality_name(target) + " length " + std::to_string(tt) +
                                       ": the ratio is not an integer");
  }
  return tv / tt;
}

std::size_t count(const Tensor& t) { return t.numel(); }

std::size_t count_layers(const std::vector<TransformerLayerParams>& layers) {
  ParamList pl;
  for (const auto& l : layers) l.collect("", pl);
  std::size_t n = 0;
  for (const auto& [_, t] : pl) n += t.numel();
  return n;
}

}  // namespace

Network build_teacher(TeacherBranch branch, const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Network net;
  net.role_ = Role::Teacher;
  net.branch_ = branch;
  net.cfg_ = cfg;
  Rng rng(seed);
  for (auto m : kModalities) net.front_ends_.push_back(init_front_end(rng, cfg, m, m, 1));
  const auto queries = branch_queries(branch);
  build_branches(rng, cfg, Side::Teacher, queries, net.cross_, net.fusion_);
  net.head_ = init_head(rng, cfg, 2 * cfg.d_model * queries.size());
  return net;
}

Network build_student(int config, const NetworkConfig& cfg, std::uint64_t seed) {
  if (config < 1 || config > 5) throw Error(ErrorKind::Config, "student configuration must be 1..5, got " + std::to_string(config));
  cfg.validate();
  Network net;
  net.role_ = Role::Student;
  net.student_config_ = config;
  net.cfg_ = cfg;
  Rng rng(seed);
  const std::size_t sa = cfg.student_downsample ? downsample_stride(cfg, Modality::Audio) : 1;
  const std::size_t sl = cfg.student_downsample ? downsample_stride(cfg, Modality::Language) : 1;
  net.front_ends_.push_back(init_front_end(rng, cfg, Modality::Video, Modality::Video, 1));
  net.front_ends_.push_back(init_front_end(rng, cfg, Modality::Video, Modality::Audio, sa));
  net.front_ends_.push_back(init_front_end(rng, cfg, Modality::Video, Modality::Language, sl));

  const auto V = Modality::Video, A = Modality::Audio, L = Modality::Language;
  const auto S = Side::Student;
  if (config == 1) {
    build_branches(rng, cfg, S, {V, A, L}, net.cross_, net.fusion_);
    net.head_ = init_head(rng, cfg, 6 * cfg.d_model);
    return net;
  }
  std::vector<TransformerId> ids;
  switch (config) {
    case 2: ids = {{V, V, S}, {A, V, S}, {L, V, S}}; break;
    case 3: ids = {{V, V, S}, {V, L, S}, {A, L, S}}; break;
    case 4: ids = {{V, V, S}, {V, A, S}, {L, A, S}}; break;
    default: ids = {{V, V, S}, {V, L, S}, {V, A, S}}; break;
  }
  for (const auto& id : ids) net.cross_.push_back({id, init_layers(rng, cfg, cfg.d_model), cfg.d_model});
  net.head_ = init_head(rng, cfg, 3 * cfg.d_model);
  return net;
}

std::vector<TransformerId> Network::stack_ids() const {
  std::vector<TransformerId> ids;
  for (const auto& s : cross_) ids.push_back(s.id);
  for (const auto& s : fusion_) ids.push_back(s.id);
  return ids;
}

const Stack& Network::stack(const TransformerId& id) const {
  for (const auto& s : cross_)
    if (s.id == id) return s;
  for (const auto& s : fusion_)
    if (s.id == id) return s;
  throw Error(ErrorKind::Config, "network " + label() + " has no transformer " + id.str());
}

std::vector<Modality> Network::inputs() const {
  if (role_ == Role::Student) return {Modality::Video};
  return {kModalities.begin(), kModalities.end()};
}

std::size_t Network::stream_steps(Modality stream) const {
  for (const auto& f : front_ends_) {
    if (f.stream == stream) {
      return ops::conv1d_out_steps(cfg_.shape(f.input).steps, cfg_.conv_kernel, f.stride, ops::Padding::Same);
    }
  }
  throw Error(ErrorKind::Config, std::string("network has no ") + modality_name(stream) + " stream");
}

std::pair<std::size_t, std::size_t> Network::map_shape(const TransformerId& id) const {
  stack(id);
  const std::size_t q = stream_steps(id.query);
  return {q, id.fusion ? q : stream_steps(id.key_value)};
}

ParamList Network::parameters() const {
  ParamList out;
  for (const auto& f : front_ends_) {
    const std::string p = std::string("front.") + modality_letter(f.stream) + ".";
    out.emplace_back(p + "w", f.weight);
    out.emplace_back(p + "b", f.bias);
  }
  for (const auto& s : cross_)
    for (std::size_t i = 0; i < s.layers.size(); ++i) s.layers[i].collect(s.id.str() + ".l" + std::to_string(i) + ".", out);
  for (const auto& s : fusion_)
    for (std::size_t i = 0; i < s.layers.size(); ++i) s.layers[i].collect(s.id.str() + ".l" + std::to_string(i) + ".", out);
  out.emplace_back("head.w1", head_.w1);
  out.emplace_back("head.b1", head_.b1);
  out.emplace_back("head.w2", head_.w2);
  out.emplace_back("head.b2", head_.b2);
  return out;
}

ParamBreakdown Network::param_breakdown() const {
  ParamBreakdown b;
  for (const auto& f : front_ends_) b.front_ends += count(f.weight) + count(f.bias);
  for (const auto& s : cross_) b.cross_stacks += count_layers(s.layers);
  for (const auto& s : fusion_) b.fusion_stacks += count_layers(s.layers);
  b.head = count(head_.w1) + count(head_.b1) + count(head_.w2) + count(head_.b2);
  return b;
}

void Network::set_trainable(bool on) {
  for (auto& [_, t] : parameters()) {
    Tensor p = t;
    p.set_requires_grad(on);
    p.zero_grad();
  }
}

std::string Network::label() const {
  if (role_ == Role::Teacher) return std::string("teacher/") + branch_name(branch_);
  return "student/" + std::to_string(student_config_);
}

const AttentionTrace& ForwardTrace::trace(const TransformerId& id) const {
  auto it = traces.find(id);
  if (it == traces.end()) throw Error(ErrorKind::Config, "no attention trace for " + id.str());
  return it->second;
}

ForwardTrace network_forward(const Network& net, const Batch& batch) {
  const NetworkConfig& cfg = net.cfg_;
  std::size_t B = 0;
  for (auto m : net.inputs()) {
    auto it = batch.find(m);
    if (it == batch.end()) {
      throw Error(ErrorKind::Data, std::string("batch is missing the ") + modality_name(m) + " modality required by " + net.label());
    }
    const Tensor& x = it->second;
    const auto& ms = cfg.shape(m);
    if (x.rank() != 3 || x.dim(1) != ms.steps || x.dim(2) != ms.width || (B != 0 && x.dim(0) != B)) {
      throw Error(ErrorKind::Data, std::string(modality_name(m)) + " batch has shape " + shape_string(x.shape()) +
                                       ", expected [B, " + std::to_string(ms.steps) + ", " + std::to_string(ms.width) + "]");
    }
    B = x.dim(0);
  }

  std::map<Modality, Tensor> streams;
  for (const auto& f : net.front_ends_) {
    Tensor h = ops::conv1d(batch.at(f.input), f.weight, f.bias, f.stride, ops::Padding::Same);
    const std::size_t T = h.dim(1);
    const Tensor pe = sinusoidal_pos_emb(T, cfg.d_model);
    std::vector<Real> tiled;
    tiled.reserve(B * pe.numel());
    for (std::size_t b = 0; b < B; ++b) tiled.insert(tiled.end(), pe.data().begin(), pe.data().end());
    streams[f.stream] = ops::add(h, Tensor({B, T, cfg.d_model}, std::move(tiled)));
  }

  ForwardTrace out;
  std::map<TransformerId, Tensor> outputs;
  for (const auto& s : net.cross_) {
    const Tensor& q = streams.at(s.id.query);
    StackOutput so = stack_forward(q, s.id.self_attention() ? Tensor() : streams.at(s.id.key_value), s.layers);
    outputs[s.id] = so.y;
    out.traces.emplace(s.id, std::move(so.trace));
  }

  std::vector<Tensor> last;
  if (net.fusion_.empty()) {
    for (const auto& s : net.cross_) {
      const Tensor& y = outputs.at(s.id);
      last.push_back(ops::select_step(y, y.dim(1) - 1));
    }
  } else {
    for (const auto& s : net.fusion_) {
      std::vector<Tensor> parts;
      for (const auto& id : branch_cross_ids(s.id.query, s.id.side)) parts.push_back(outputs.at(id));
      StackOutput so = stack_forward(ops::concat_last(parts), Tensor(), s.layers);
      last.push_back(ops::select_step(so.y, so.y.dim(1) - 1));
      out.traces.emplace(s.id, std::move(so.trace));
    }
  }

  const Tensor features = last.size() == 1 ? last[0] : ops::concat_last(last);
  out.penultimate_feat = ops::relu(ops::linear(features, net.head_.w1, net.head_.b1));
  out.final_feat = ops::linear(out.penultimate_feat, net.head_.w2, net.head_.b2);
  out.logits = out.final_feat;
  return out;
}

TeacherBranch teacher_for_config(int config) {
  switch (config) {
    case 1: case 5: return TeacherBranch::Complete;
    case 2: return TeacherBranch::Video;
    case 3: return TeacherBranch::Language;
    case 4: return TeacherBranch::Audio;
  }
  throw Error(ErrorKind::Config, "student configuration must be 1..5, got " + std::to_string(config));
}

std::vector<std::pair<TransformerId, TransformerId>> pair_map(int config) {
  const auto V = Modality::Video, A = Modality::Audio, L = Modality::Language;
  std::vector<TransformerId> teacher_ids;
  switch (config) {
    case 1:
      for (auto q : {V, A, L})
        for (const auto& id : branch_cross_ids(q, Side::Teacher)) teacher_ids.push_back(id);
      for (auto q : {V, A, L}) teacher_ids.push_back({q, q, Side::Teacher, true});
      break;
    case 2: teacher_ids = {{A, V, Side::Teacher}, {L, V, Side::Teacher}}; break;
    case 3: teacher_ids = {{V, L, Side::Teacher}, {A, L, Side::Teacher}}; break;
    case 4: teacher_ids = {{V, A, Side::Teacher}, {L, A, Side::Teacher}}; break;
    case 5: teacher_ids = {{V, A, Side::Teacher}, {V, L, Side::Teacher}}; break;
    default: throw Error(ErrorKind::Config, "student configuration must be 1..5, got " + std::to_string(config));
  }
  std::vector<std::pair<TransformerId, TransformerId>> pairs;
  for (const auto& t : teacher_ids) pairs.emplace_back(t.on_side(Side::Student), t);
  return pairs;
}

std::uint64_t parameter_hash(const Network& net) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& [name, t] : net.parameters()) {
    for (char c : name) {
      h ^= static_cast<unsigned char>(c);
      h *= 1099511628211ULL;
    }
    for (Real v : t.data()) {
      unsigned char bytes[sizeof(Real)];
      std::memcpy(bytes, &v, sizeof(Real));
      for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
