#pragma once

#include <vector>

#include "mmkd/network.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

inline constexpr std::size_t kMinBenchRepeats = 10;

struct LatencyStats {
  std::vector<double> samples_ms;
  double median_ms = 0.0;
  double q1_ms = 0.0;
  double q3_ms = 0.0;
  double iqr_ms() const { return q3_ms - q1_ms; }
};

/// Quartiles by linear interpolation between order statistics.
LatencyStats summarize_latency(std::vector<double> samples_ms);

/// Times `repeats` forward passes (after `warmup` untimed ones) on one
/// worker thread. Throws Parameter when repeats < kMinBenchRepeats.
LatencyStats measure_forward_latency(const Network& net, const Batch& batch, std::size_t repeats,
                                     std::size_t warmup = 3);

struct PairedLatency {
  LatencyStats first;
  LatencyStats second;
  double ratio() const { return first.median_ms / second.median_ms; }
};

/// Interleaves the two networks within every repeat, alternating which goes
/// first, so slow drifts in machine state hit both equally.
PairedLatency measure_paired_latency(const Network& first, const Network& second, const Batch& batch,
                                     std::size_t repeats, std::size_t warmup = 3);

}  // namespace MMKD_ABI
}  // namespace mmkd
