#pragma once

#include <array>
#include <vector>

#include "mmkd/data.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

using Confusion = std::array<std::array<std::size_t, kNumClasses>, kNumClasses>;  // [truth][prediction]

struct Metrics {
  std::size_t total = 0;
  double accuracy = 0.0;
  double f1_weighted = 0.0;  // support-weighted over the classes
  double f1_macro = 0.0;     // unweighted over classes seen in truth or predictions
  double loss = 0.0;         // mean cross-entropy, when logits were available
  Confusion confusion{};
};

Metrics metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted);

/// Argmax predictions plus mean cross-entropy over `ds`, in batches.
Metrics evaluate(const Network& net, const MultimodalDataset& ds, std::size_t batch = 256);

}  // namespace MMKD_ABI
}  // namespace mmkd
