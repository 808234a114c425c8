#include "mmkd/distill.hpp"

#include <algorithm>
#include <cmath>

#include "mmkd/ops.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

namespace {
constexpr KdMethod kMethods[] = {KdMethod::None,          KdMethod::CrdFinal,  KdMethod::CrdPenultimate,
                                 KdMethod::CrdPostAttention, KdMethod::CrdAttentionMap, KdMethod::EdamSDown,
                                 KdMethod::EdamTUp};

// Keeps every upsampled row strictly positive before renormalization.
constexpr double kUpsampleFloor = 1e-6;

std::string shape_pair(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}
}  // namespace

const char* kd_method_name(KdMethod m) {
  switch (m) {
    case KdMethod::None: return "none";
    case KdMethod::CrdFinal: return "crd_final";
    case KdMethod::CrdPenultimate: return "crd_penultimate";
    case KdMethod::CrdPostAttention: return "crd_postattn";
    case KdMethod::CrdAttentionMap: return "crd_attnmap";
    case KdMethod::EdamSDown: return "edam_s_down";
    case KdMethod::EdamTUp: return "edam_t_up";
  }
  return "?";
}

KdMethod kd_method_from_name(const std::string& name) {
  for (auto m : kMethods)
    if (name == kd_method_name(m)) return m;
  throw Error(ErrorKind::Config, "unknown distillation method '" + name + "'");
}

Alignment alignment_for(KdMethod m) {
  switch (m) {
    case KdMethod::EdamTUp: return Alignment::TUp;
    case KdMethod::EdamSDown:
    case KdMethod::CrdAttentionMap: return Alignment::SDown;
    default: return Alignment::None;
  }
}

void DistillLossConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
    throw Error(ErrorKind::Parameter, "loss weights alpha and beta must lie in [0, 1]");
  }
  if (!(temperature > 0.0)) throw Error(ErrorKind::Parameter, "EDAM temperature must be > 0");
  if (!(crd_temperature > 0.0)) throw Error(ErrorKind::Parameter, "CRD temperature must be > 0");
  if (crd_dim == 0) throw Error(ErrorKind::Parameter, "CRD embedding width must be positive");
  if (!(epsilon >= 0.0)) throw Error(ErrorKind::Parameter, "log floor must be >= 0");
}

double crd_loss(std::span<const double> s, std::span<const double> t_pos, std::span<const double> negatives,
                double tau) {
  const std::size_t d = s.size();
  if (d == 0 || t_pos.size() != d || negatives.size() % d != 0) {
    throw Error(ErrorKind::Dimension, "crd_loss: embedding widths disagree");
  }
  if (negatives.empty()) throw Error(ErrorKind::Parameter, "crd_loss needs at least one negative");
  if (!(tau > 0.0)) throw Error(ErrorKind::Parameter, "crd_loss temperature must be > 0");
  const auto dot = [&](std::span<const double> v) {
    double acc = 0;
    for (std::size_t i = 0; i < d; ++i) acc += s[i] * v[i];
    return acc / tau;
  };
  std::vector<double> logits{dot(t_pos)};
  for (std::size_t k = 0; k < negatives.size() / d; ++k) logits.push_back(dot(negatives.subspan(k * d, d)));
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[0];
}

double edam_row_cross_entropy(std::span<const double> a, std::span<const double> b, double eps) {
  if (a.size() != b.size()) throw Error(ErrorKind::Dimension, "edam_row_cross_entropy: row widths differ");
  double f = 0;
  for (std::size_t k = 0; k < a.size(); ++k) f -= a[k] * std::log(b[k] + eps);
  return f;
}

Tensor crd_grouped_loss(const Tensor& student, const Tensor& teacher, double tau) {
  if (student.rank() != 3 || student.shape() != teacher.shape()) {
    throw Error(ErrorKind::Dimension, "contrastive loss needs equal [G, N, d] inputs, got " + shape_pair(student, teacher));
  }
  const std::size_t G = student.dim(0), N = student.dim(1);
  if (N < 2) throw Error(ErrorKind::Config, "contrastive distillation needs a batch of at least 2 for negatives");
  const Tensor logits = ops::scale(ops::matmul(student, teacher, false, true), 1.0 / tau);
  std::vector<int> labels(G * N);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % N);
  return ops::cross_entropy_logits(ops::reshape(logits, {G * N, N}), labels);
}

Tensor crd_batch_loss(const Tensor& student, const Tensor& teacher, double tau) {
  if (student.rank() != 2 || student.shape() != teacher.shape()) {
    throw Error(ErrorKind::Dimension, "contrastive loss needs equal [N, d] inputs, got " + shape_pair(student, teacher));
  }
  const Shape s{1, student.dim(0), student.dim(1)};
  return crd_grouped_loss(ops::reshape(student, s), ops::reshape(teacher, s), tau);
}

Tensor CrdProjection::apply(const Tensor& x) const { return ops::l2_normalize(ops::linear(x, w, b)); }

Tensor interpolation_matrix(std::size_t out, std::size_t in) {
  std::vector<Real> m(out * in, Real(0));
  for (std::size_t i = 0; i < out; ++i) {
    double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    pos = std::clamp(pos, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, in - 1);
    const double frac = pos - static_cast<double>(lo);
    m[i * in + lo] += static_cast<Real>(1.0 - frac);
    m[i * in + hi] += static_cast<Real>(frac);
  }
  return Tensor({out, in}, std::move(m));
}

namespace {

CrdProjection make_projection(Rng& rng, std::size_t in, std::size_t out) {
  return {glorot(rng, in, out, {in, out}), Tensor::zeros({out}, true)};
}

Tensor transpose2(const Tensor& m) {
  const std::size_t r = m.dim(0), c = m.dim(1);
  std::vector<Real> v(m.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) v[j * r + i] = m.data()[i * c + j];
  return Tensor({c, r}, std::move(v));
}

Tensor map_at(const AttentionTrace& t, std::size_t layer, double temperature) {
  if (temperature == 1.0) return t.maps[layer];
  return attention_map_at(t.logits[layer], temperature);
}

void require_equal_layers(const AttentionTrace& s, const AttentionTrace& t, const StackPair& p) {
  if (s.layers() != t.layers()) {
    throw Error(ErrorKind::Config, "paired stacks " + p.first.str() + " / " + p.second.str() + " have " +
                                       std::to_string(s.layers()) + " and " + std::to_string(t.layers()) + " layers");
  }
}

}  // namespace

DistillState::DistillState(KdMethod method, const std::vector<StackPair>& pairs, const Network& student,
                           const Network& teacher, const DistillLossConfig& cfg, std::uint64_t seed)
    : method_(method), pairs_(pairs) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t d = cfg.crd_dim;
  switch (method) {
    case KdMethod::None: break;
    case KdMethod::CrdFinal:
      student_proj_.push_back(make_projection(rng, student.config().num_classes, d));
      teacher_proj_.push_back(make_projection(rng, teacher.config().num_classes, d));
      break;
    case KdMethod::CrdPenultimate:
      student_proj_.push_back(make_projection(rng, student.config().head_hidden, d));
      teacher_proj_.push_back(make_projection(rng, teacher.config().head_hidden, d));
      break;
    case KdMethod::CrdPostAttention:
      for (const auto& [s, t] : pairs_) {
        student_proj_.push_back(make_projection(rng, student.stack(s).width, d));
        teacher_proj_.push_back(make_projection(rng, teacher.stack(t).width, d));
      }
      break;
    case KdMethod::CrdAttentionMap:
    case KdMethod::EdamSDown:
      for (const auto& [s, t] : pairs_) {
        const auto ss = student.map_shape(s);
        const auto ts = teacher.map_shape(t);
        if (ss != ts) {
          throw Error(ErrorKind::Alignment,
                      "attention maps of " + s.str() + " (" + std::to_string(ss.first) + "x" + std::to_string(ss.second) +
                          ") and " + t.str() + " (" + std::to_string(ts.first) + "x" + std::to_string(ts.second) +
                          ") differ; the student front-ends must downsample to the teacher lengths");
        }
        if (method == KdMethod::CrdAttentionMap) {
          student_proj_.push_back(make_projection(rng, ss.second, d));
          teacher_proj_.push_back(make_projection(rng, ts.second, d));
        }
      }
      break;
    case KdMethod::EdamTUp:
      for (const auto& [s, t] : pairs_) {
        const auto ss = student.map_shape(s);
        const auto ts = teacher.map_shape(t);
        UpsampleMap up;
        up.rows = interpolation_matrix(ss.first, ts.first);
        up.cols = transpose2(interpolation_matrix(ss.second, ts.second));
        up.rows.set_requires_grad(true);
        up.cols.set_requires_grad(true);
        upsample_.push_back(std::move(up));
      }
      break;
  }
  if (method != KdMethod::None && method != KdMethod::CrdFinal && method != KdMethod::CrdPenultimate && pairs_.empty()) {
    throw Error(ErrorKind::Config, std::string(kd_method_name(method)) + " needs at least one stack pair");
  }
}

ParamList DistillState::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < student_proj_.size(); ++i) {
    out.emplace_back("kd.proj.student." + std::to_string(i) + ".w", student_proj_[i].w);
    out.emplace_back("kd.proj.student." + std::to_string(i) + ".b", student_proj_[i].b);
    out.emplace_back("kd.proj.teacher." + std::to_string(i) + ".w", teacher_proj_[i].w);
    out.emplace_back("kd.proj.teacher." + std::to_string(i) + ".b", teacher_proj_[i].b);
  }
  for (std::size_t i = 0; i < upsample_.size(); ++i) {
    out.emplace_back("kd.upsample." + std::to_string(i) + ".rows", upsample_[i].rows);
    out.emplace_back("kd.upsample." + std::to_string(i) + ".cols", upsample_[i].cols);
  }
  return out;
}

Tensor kd_layer_crd(FeatureSite site, const ForwardTrace& student, const ForwardTrace& teacher,
                    const DistillState& state, const DistillLossConfig& cfg) {
  const Tensor& s = site == FeatureSite::Final ? student.final_feat : student.penultimate_feat;
  const Tensor& t = site == FeatureSite::Final ? teacher.final_feat : teacher.penultimate_feat;
  if (s.dim(0) < 2) throw Error(ErrorKind::Config, "contrastive distillation needs a batch of at least 2");
  return crd_batch_loss(state.student_projection(0).apply(s), state.teacher_projection(0).apply(t),
                        cfg.crd_temperature);
}

Tensor kd_postattn_crd(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                       const DistillLossConfig& cfg) {
  std::vector<Tensor> per_pair;
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    const auto& pair = state.pairs()[p];
    const AttentionTrace& st = student.trace(pair.first);
    const AttentionTrace& tt = teacher.trace(pair.second);
    require_equal_layers(st, tt, pair);
    std::vector<Tensor> per_layer;
    for (std::size_t i = 0; i < st.layers(); ++i) {
      const Tensor s = state.student_projection(p).apply(ops::mean_axis(st.post_attention[i], 1));
      const Tensor t = state.teacher_projection(p).apply(ops::mean_axis(tt.post_attention[i], 1));
      per_layer.push_back(crd_batch_loss(s, t, cfg.crd_temperature));
    }
    per_pair.push_back(ops::mean(ops::concat_last(per_layer)));
  }
  return ops::mean(ops::concat_last(per_pair));
}

std::vector<AlignedMaps> align_attention(const ForwardTrace& student, const ForwardTrace& teacher,
                                         const DistillState& state, Alignment mode, double temperature) {
  std::vector<AlignedMaps> out;
  for (std::size_t p = 0; p < state.pairs().size(); ++p) {
    const auto& pair = state.pairs()[p];
    const AttentionTrace& st = student.trace(pair.first);
    const AttentionTrace& tt = teacher.trace(pair.second);
    require_equal_layers(st, tt, pair);
    AlignedMaps am;
    for (std::size_t i = 0; i < st.layers(); ++i) {
      Tensor s = map_at(st, i, temperature);
      Tensor t = map_at(tt, i, temperature);
      if (mode == Alignment::TUp) {
        if (!state.has_upsample()) throw Error(ErrorKind::Alignment, "upsampling requested without learned maps");
        t = upsample_map(t, state.upsample(p));
      }
      if (s.shape() != t.shape()) {
        throw Error(ErrorKind::Alignment, "maps of " + pair.first.str() + " and " + pair.second.str() +
                                              " are not shape-equal: " + shape_pair(s, t));
      }
      am.student.push_back(std::move(s));
      am.teacher.push_back(std::move(t));
    }
    out.push_back(std::move(am));
  }
  return out;
}

Tensor upsample_map(const Tensor& teacher_map, const UpsampleMap& up) {
  if (teacher_map.rank() != 3 || up.rows.dim(1) != teacher_map.dim(1) || up.cols.dim(0) != teacher_map.dim(2)) {
    throw Error(ErrorKind::Alignment, "upsampling maps " + shape_string(up.rows.shape()) + " / " +
                                          shape_string(up.cols.shape()) + " do not fit teacher map " +
                                          shape_string(teacher_map.shape()));
  }
  const std::size_t B = teacher_map.dim(0);
  const Tensor mc = ops::matmul(teacher_map, up.cols);  // [B, m_t, n_s]
  const std::size_t mt = mc.dim(1), ns = mc.dim(2), ms = up.rows.dim(0);
  // R is shared on the left: fold the batch into the column axis.
  const Tensor folded = ops::reshape(ops::swap_leading(mc), {mt, B * ns});
  const Tensor rmc = ops::swap_leading(ops::reshape(ops::matmul(up.rows, folded), {ms, B, ns}));
  const Tensor floor = Tensor::full(rmc.shape(), static_cast<Real>(kUpsampleFloor));
  return ops::row_normalize(ops::add(ops::relu(rmc), floor));
}

Tensor kd_attnmap_crd(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                      const DistillLossConfig& cfg) {
  const auto aligned = align_attention(student, teacher, state, Alignment::SDown, 1.0);
  std::vector<Tensor> per_pair;
  for (std::size_t p = 0; p < aligned.size(); ++p) {
    std::vector<Tensor> per_layer;
    for (std::size_t i = 0; i < aligned[p].student.size(); ++i) {
      const Tensor s = ops::swap_leading(state.student_projection(p).apply(aligned[p].student[i]));
      const Tensor t = ops::swap_leading(state.teacher_projection(p).apply(aligned[p].teacher[i]));
      per_layer.push_back(crd_grouped_loss(s, t, cfg.crd_temperature));
    }
    per_pair.push_back(ops::mean(ops::concat_last(per_layer)));
  }
  return ops::mean(ops::concat_last(per_pair));
}

Tensor edam_loss(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                 Alignment mode, const DistillLossConfig& cfg) {
  if (!(cfg.temperature > 0.0)) throw Error(ErrorKind::Parameter, "EDAM temperature must be > 0");
  const auto aligned = align_attention(student, teacher, state, mode, cfg.temperature);
  std::vector<Tensor> per_pair;
  for (const auto& am : aligned) {
    std::vector<Tensor> per_layer;
    for (std::size_t i = 0; i < am.student.size(); ++i) {
      const Tensor& b = am.student[i];
      const double rows = static_cast<double>(b.dim(0) * b.dim(1));
      const Tensor f = ops::sum(ops::mul(am.teacher[i], ops::log_eps(b, cfg.epsilon)));
      per_layer.push_back(ops::scale(f, -1.0 / rows));
    }
    per_pair.push_back(ops::mean(ops::concat_last(per_layer)));
  }
  return ops::mean(ops::concat_last(per_pair));
}

Tensor distillation_loss(const ForwardTrace& student, const ForwardTrace& teacher, const DistillState& state,
                         const DistillLossConfig& cfg) {
  switch (state.method()) {
    case KdMethod::None: return Tensor::scalar(0);
    case KdMethod::CrdFinal: return kd_layer_crd(FeatureSite::Final, student, teacher, state, cfg);
    case KdMethod::CrdPenultimate: return kd_layer_crd(FeatureSite::Penultimate, student, teacher, state, cfg);
    case KdMethod::CrdPostAttention: return kd_postattn_crd(student, teacher, state, cfg);
    case KdMethod::CrdAttentionMap: return kd_attnmap_crd(student, teacher, state, cfg);
    case KdMethod::EdamSDown: return edam_loss(student, teacher, state, Alignment::SDown, cfg);
    case KdMethod::EdamTUp: return edam_loss(student, teacher, state, Alignment::TUp, cfg);
  }
  return Tensor::scalar(0);
}

LossBreakdown total_loss(const Tensor& classification, const Tensor& distillation, double alpha, double beta) {
  if (!(alpha >= 0.0 && alpha <= 1.0) || !(beta >= 0.0 && beta <= 1.0)) {
    throw Error(ErrorKind::Parameter, "loss weights must lie in [0, 1], got alpha=" + std::to_string(alpha) +
                                          " beta=" + std::to_string(beta));
  }
  LossBreakdown out;
  out.classification = classification.item();
  out.distillation = distillation.defined() ? distillation.item() : 0.0;
  out.total = distillation.defined()
                  ? ops::add(ops::scale(classification, alpha), ops::scale(distillation, beta))
                  : ops::scale(classification, alpha);
  out.value = out.total.item();
  return out;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
