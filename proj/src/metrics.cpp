#include "mmkd/metrics.hpp"

#include <algorithm>

#include "mmkd/ops.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

Metrics metrics_from_predictions(const std::vector<int>& truth, const std::vector<int>& predicted) {
  if (truth.empty()) throw Error(ErrorKind::Data, "cannot score an empty dataset");
  if (truth.size() != predicted.size()) throw Error(ErrorKind::Dimension, "truth and prediction counts differ");
  Metrics m;
  m.total = truth.size();
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = predicted[i];
    if (t < 0 || p < 0 || t >= static_cast<int>(kNumClasses) || p >= static_cast<int>(kNumClasses)) {
      throw Error(ErrorKind::Data, "class index out of range");
    }
    ++m.confusion[t][p];
  }
  std::size_t correct = 0, seen = 0;
  double weighted = 0, macro = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::size_t tp = m.confusion[c][c], support = 0, predicted_c = 0;
    for (std::size_t o = 0; o < kNumClasses; ++o) {
      support += m.confusion[c][o];
      predicted_c += m.confusion[o][c];
    }
    correct += tp;
    if (support == 0 && predicted_c == 0) continue;
    ++seen;
    const double precision = predicted_c ? static_cast<double>(tp) / static_cast<double>(predicted_c) : 0.0;
    const double recall = support ? static_cast<double>(tp) / static_cast<double>(support) : 0.0;
    const double f1 = precision + recall > 0 ? 2 * precision * recall / (precision + recall) : 0.0;
    weighted += f1 * static_cast<double>(support);
    macro += f1;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.total);
  m.f1_weighted = weighted / static_cast<double>(m.total);
  m.f1_macro = macro / static_cast<double>(seen);
  return m;
}

Metrics evaluate(const Network& net, const MultimodalDataset& ds, std::size_t batch) {
  if (ds.size() == 0) throw Error(ErrorKind::Data, "cannot evaluate on an empty dataset");
  if (batch == 0) throw Error(ErrorKind::Parameter, "evaluation batch must be positive");
  NoGradGuard no_grad;
  std::vector<int> truth, predicted;
  double loss_sum = 0;
  for (std::size_t start = 0; start < ds.size(); start += batch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) idx.push_back(i);
    const LabeledBatch b = make_batch(ds, idx);
    const ForwardTrace fw = network_forward(net, b.inputs);
    loss_sum += static_cast<double>(ops::cross_entropy_logits(fw.logits, b.labels).item()) *
                static_cast<double>(idx.size());
    const std::size_t c = fw.logits.dim(1);
    const auto logits = fw.logits.data();
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const auto row = logits.subspan(r * c, c);
      predicted.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    truth.insert(truth.end(), b.labels.begin(), b.labels.end());
  }
  Metrics m = metrics_from_predictions(truth, predicted);
  m.loss = loss_sum / static_cast<double>(ds.size());
  return m;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
