#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mmkd/distill.hpp"
#include "mmkd/metrics.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 64;
  double lr = 1e-3;
  std::size_t patience = 10;
  double factor = 0.5;
  double clip_norm = 1.0;  // global gradient norm; 0 disables clipping
  AdamConfig adam;
  std::uint64_t seed = 0;
  KdMethod method = KdMethod::None;
  DistillLossConfig kd;

  void validate() const;
};

/// Per-parameter first/second moments and a shared step counter.
class Adam {
 public:
  Adam(ParamList params, AdamConfig cfg);
  /// Applies one update from the gradients currently stored on the
  /// parameters, after global-norm clipping. Returns the pre-clip norm.
  double step(double lr, double clip_norm);
  std::size_t steps() const { return t_; }

 private:
  ParamList params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

/// Halves the learning rate once the validation loss has failed to improve
/// on its best value for more than `patience` consecutive epochs.
class ReduceLROnPlateau {
 public:
  ReduceLROnPlateau(double lr, std::size_t patience, double factor);
  double step(double val_loss);
  double lr() const { return lr_; }
  std::size_t bad_epochs() const { return bad_; }

 private:
  double lr_;
  std::size_t patience_;
  double factor_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t bad_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_total = 0.0;
  double train_classification = 0.0;
  double train_distillation = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double val_f1 = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct History {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_loss = std::numeric_limits<double>::infinity();

  /// One JSON object per epoch, newline separated.
  std::string to_jsonl() const;
  bool operator==(const History&) const = default;
};

struct TrainResult {
  History history;
  DistillState distill;
};

/// Trains `net` in place and leaves it holding the weights with the lowest
/// validation loss. With a KD method the teacher is frozen, run without
/// recording, and checked to be unchanged at the end.
TrainResult train(Network& net, const MultimodalDataset& train_set, const MultimodalDataset& val_set,
                  const TrainConfig& cfg, const Network* teacher = nullptr);

}  // namespace MMKD_ABI
}  // namespace mmkd
