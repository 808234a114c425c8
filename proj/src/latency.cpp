#include "mmkd/latency.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>

namespace mmkd {
inline namespace MMKD_ABI {

namespace {

class SingleThread {
 public:
  SingleThread() : saved_(omp_get_max_threads()) { omp_set_num_threads(1); }
  ~SingleThread() { omp_set_num_threads(saved_); }

 private:
  int saved_;
};

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double time_forward_ms(const Network& net, const Batch& batch) {
  const auto t0 = std::chrono::steady_clock::now();
  const ForwardTrace fw = network_forward(net, batch);
  const auto t1 = std::chrono::steady_clock::now();
  (void)fw;
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void check_repeats(std::size_t repeats) {
  if (repeats < kMinBenchRepeats) {
    throw Error(ErrorKind::Parameter, "benchmark needs at least " + std::to_string(kMinBenchRepeats) + " repeats, got " +
                                          std::to_string(repeats));
  }
}

}  // namespace

LatencyStats summarize_latency(std::vector<double> samples_ms) {
  if (samples_ms.empty()) throw Error(ErrorKind::Parameter, "no latency samples");
  LatencyStats s;
  s.samples_ms = samples_ms;
  std::sort(samples_ms.begin(), samples_ms.end());
  s.median_ms = quantile(samples_ms, 0.5);
  s.q1_ms = quantile(samples_ms, 0.25);
  s.q3_ms = quantile(samples_ms, 0.75);
  return s;
}

LatencyStats measure_forward_latency(const Network& net, const Batch& batch, std::size_t repeats,
                                     std::size_t warmup) {
  check_repeats(repeats);
  SingleThread pin;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < warmup; ++i) time_forward_ms(net, batch);
  std::vector<double> samples;
  for (std::size_t i = 0; i < repeats; ++i) samples.push_back(time_forward_ms(net, batch));
  return summarize_latency(std::move(samples));
}

PairedLatency measure_paired_latency(const Network& first, const Network& second, const Batch& batch,
                                     std::size_t repeats, std::size_t warmup) {
  check_repeats(repeats);
  SingleThread pin;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < warmup; ++i) {
    time_forward_ms(first, batch);
    time_forward_ms(second, batch);
  }
  std::vector<double> a, b;
  for (std::size_t i = 0; i < repeats; ++i) {
    if (i % 2 == 0) {
      a.push_back(time_forward_ms(first, batch));
      b.push_back(time_forward_ms(second, batch));
    } else {
      b.push_back(time_forward_ms(second, batch));
      a.push_back(time_forward_ms(first, batch));
    }
  }
  return {summarize_latency(std::move(a)), summarize_latency(std::move(b))};
}

}  // namespace MMKD_ABI
}  // namespace mmkd
