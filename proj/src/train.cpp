#include "mmkd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include <nlohmann/json.hpp>

#include "mmkd/ops.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

void TrainConfig::validate() const {
  if (epochs == 0) throw Error(ErrorKind::Config, "epochs must be positive");
  if (batch < 2) throw Error(ErrorKind::Config, "batch must be at least 2");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw Error(ErrorKind::Config, "lr must be positive");
  if (!(factor > 0.0 && factor < 1.0)) throw Error(ErrorKind::Config, "scheduler factor must lie in (0, 1)");
  if (!(clip_norm >= 0.0)) throw Error(ErrorKind::Config, "clip_norm must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) || !(adam.epsilon > 0.0)) {
    throw Error(ErrorKind::Config, "optimizer moments must lie in [0, 1) and epsilon be positive");
  }
  kd.validate();
}

Adam::Adam(ParamList params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& [_, p] : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

double Adam::step(double lr, double clip_norm) {
  double sq = 0;
  for (const auto& [_, p] : params_)
    for (Real g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  const double scale = clip_norm > 0.0 && norm > clip_norm ? clip_norm / norm : 1.0;

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].second;
    const auto g = p.grad();
    if (g.empty()) continue;  // parameter not reached by this loss
    auto w = p.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]) * scale;
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      w[j] = static_cast<Real>(static_cast<double>(w[j]) - lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg_.epsilon));
    }
  }
  return norm;
}

ReduceLROnPlateau::ReduceLROnPlateau(double lr, std::size_t patience, double factor)
    : lr_(lr), patience_(patience), factor_(factor) {}

double ReduceLROnPlateau::step(double val_loss) {
  if (!std::isfinite(val_loss)) throw Error(ErrorKind::Numeric, "validation loss is not finite");
  if (val_loss < best_) {
    best_ = val_loss;
    bad_ = 0;
  } else if (++bad_ > patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return lr_;
}

std::string History::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    nlohmann::json j{{"epoch", e.epoch},
                     {"lr", e.lr},
                     {"train_total", e.train_total},
                     {"train_classification", e.train_classification},
                     {"train_distillation", e.train_distillation},
                     {"val_loss", e.val_loss},
                     {"val_accuracy", e.val_accuracy},
                     {"val_f1", e.val_f1},
                     {"best", e.epoch == best_epoch}};
    out += j.dump() + "\n";
  }
  return out;
}

namespace {

// Distinct streams derived from the run seed so that adding KD parameters
// never perturbs batch order.
constexpr std::uint64_t kShuffleStream = 0x5bd1e995ULL;
constexpr std::uint64_t kDistillStream = 0x9e3779b97f4a7c15ULL;

std::vector<std::vector<Real>> snapshot(const ParamList& params) {
  std::vector<std::vector<Real>> out;
  for (const auto& [_, p] : params) out.emplace_back(p.data().begin(), p.data().end());
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<Real>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    std::copy(saved[i].begin(), saved[i].end(), p.mutable_data().begin());
  }
}

// The frozen teacher is a pure function of each sample, so its traces are
// computed once per run and gathered per batch.
class TeacherCache {
 public:
  TeacherCache(const Network& teacher, const MultimodalDataset& ds, const std::vector<StackPair>& pairs) {
    NoGradGuard no_grad;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < ds.size(); start += kChunk) {
      idx.clear();
      for (std::size_t i = start; i < std::min(ds.size(), start + kChunk); ++i) idx.push_back(i);
      ForwardTrace full = network_forward(teacher, make_batch(ds, idx).inputs);
      ForwardTrace kept;
      kept.logits = full.logits;
      kept.penultimate_feat = full.penultimate_feat;
      kept.final_feat = full.final_feat;
      for (const auto& [_, tid] : pairs) kept.traces[tid] = full.trace(tid);
      chunks_.push_back(std::move(kept));
    }
  }

  ForwardTrace gather(const std::vector<std::size_t>& idx) const {
    ForwardTrace out;
    out.logits = rows(idx, [](const ForwardTrace& t) { return t.logits; });
    out.penultimate_feat = rows(idx, [](const ForwardTrace& t) { return t.penultimate_feat; });
    out.final_feat = rows(idx, [](const ForwardTrace& t) { return t.final_feat; });
    for (const auto& [id, trace] : chunks_.front().traces) {
      AttentionTrace& dst = out.traces[id];
      for (std::size_t l = 0; l < trace.layers(); ++l) {
        dst.maps.push_back(rows(idx, [&](const ForwardTrace& t) { return t.traces.at(id).maps[l]; }));
        dst.logits.push_back(rows(idx, [&](const ForwardTrace& t) { return t.traces.at(id).logits[l]; }));
        dst.post_attention.push_back(
            rows(idx, [&](const ForwardTrace& t) { return t.traces.at(id).post_attention[l]; }));
      }
    }
    return out;
  }

 private:
  static constexpr std::size_t kChunk = 256;

  template <typename Pick>
  Tensor rows(const std::vector<std::size_t>& idx, Pick pick) const {
    Shape shape = pick(chunks_.front()).shape();
    const std::size_t row = shape_numel(shape) / shape[0];
    std::vector<Real> v;
    v.reserve(idx.size() * row);
    for (auto i : idx) {
      const auto src = pick(chunks_[i / kChunk]).data();
      const std::size_t off = (i % kChunk) * row;
      v.insert(v.end(), src.begin() + static_cast<std::ptrdiff_t>(off),
               src.begin() + static_cast<std::ptrdiff_t>(off + row));
    }
    shape[0] = idx.size();
    return Tensor(std::move(shape), std::move(v));
  }

  std::vector<ForwardTrace> chunks_;
};

}  // namespace

TrainResult train(Network& net, const MultimodalDataset& train_set, const MultimodalDataset& val_set,
                  const TrainConfig& cfg, const Network* teacher) {
  cfg.validate();
  const bool kd = cfg.method != KdMethod::None;
  if (kd && teacher == nullptr) {
    throw Error(ErrorKind::Config, std::string("method ") + kd_method_name(cfg.method) + " needs a teacher network");
  }
  if (train_set.size() < 2) throw Error(ErrorKind::Data, "training set needs at least 2 samples");

  TrainResult result;
  std::uint64_t teacher_hash = 0;
  std::optional<TeacherCache> cache;
  if (kd) {
    Network frozen = *teacher;  // shares storage; only the flags change
    frozen.set_trainable(false);
    teacher_hash = parameter_hash(*teacher);
    const int config = net.role() == Role::Student ? net.student_config() : 0;
    if (config == 0) throw Error(ErrorKind::Config, "distillation target must be a student network");
    result.distill = DistillState(cfg.method, pair_map(config), net, *teacher, cfg.kd, cfg.seed ^ kDistillStream);
    cache.emplace(*teacher, train_set, result.distill.pairs());
  }

  const ParamList student_params = net.parameters();
  ParamList params = student_params;
  for (auto& p : result.distill.parameters()) params.push_back(p);
  for (auto& [_, p] : params) {
    Tensor t = p;
    t.set_requires_grad(true);
  }
  Adam adam(params, cfg.adam);
  ReduceLROnPlateau scheduler(cfg.lr, cfg.patience, cfg.factor);
  std::mt19937_64 shuffle_rng(cfg.seed ^ kShuffleStream);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto best = snapshot(student_params);
  History& history = result.history;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = scheduler.lr();
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      if (end - start < 2) break;  // a singleton batch has no contrastive negatives
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const LabeledBatch b = make_batch(train_set, idx);

      zero_grads(params);
      const ForwardTrace fw = network_forward(net, b.inputs);
      const Tensor lc = ops::cross_entropy_logits(fw.logits, b.labels);
      Tensor lkd;
      if (kd) {
        lkd = distillation_loss(fw, cache->gather(idx), result.distill, cfg.kd);
      }
      const LossBreakdown loss = total_loss(lc, lkd, cfg.kd.alpha, cfg.kd.beta);
      backward(loss.total);
      adam.step(scheduler.lr(), cfg.clip_norm);

      rec.train_total += loss.value;
      rec.train_classification += loss.classification;
      rec.train_distillation += loss.distillation;
      ++batches;
    }
    zero_grads(params);
    if (batches > 0) {
      rec.train_total /= static_cast<double>(batches);
      rec.train_classification /= static_cast<double>(batches);
      rec.train_distillation /= static_cast<double>(batches);
    }

    const Metrics val = evaluate(net, val_set);
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.val_f1 = val.f1_weighted;
    if (val.loss < history.best_val_loss) {
      history.best_val_loss = val.loss;
      history.best_epoch = epoch;
      best = snapshot(student_params);
    }
    scheduler.step(val.loss);
    history.epochs.push_back(rec);
  }
  restore(student_params, best);

  if (kd && parameter_hash(*teacher) != teacher_hash) {
    throw Error(ErrorKind::Usage, "teacher parameters changed during student training");
  }
  return result;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
