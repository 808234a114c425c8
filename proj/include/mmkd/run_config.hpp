#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmkd/train.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

/// One experiment. Serialized as JSON; unknown fields are rejected.
struct RunConfig {
  Role role = Role::Student;
  TeacherBranch branch = TeacherBranch::Complete;  // teachers only
  int config = 5;                                  // students only, 1..5
  KdMethod method = KdMethod::None;
  std::string preset = "desk";
  NetworkConfig network = NetworkConfig::desk();  // preset plus overrides
  DistillLossConfig distill;
  TrainConfig train;  // train.seed / method / kd mirror the fields here
  std::string data;
  std::array<double, 3> split{0.8, 0.1, 0.1};
  std::uint64_t split_seed = 0;
  std::uint64_t seed = 0;
  std::optional<std::string> teacher;  // checkpoint path

  /// Fills the derived fields (train.seed, train.method, train.kd, the
  /// network's downsampling flag) and checks cross-field rules.
  void finalize();
  void validate() const;
  std::string label() const;
};

NetworkConfig network_preset(const std::string& name);

/// With `validate` false only field-level checks run, so that command-line
/// overrides can complete the config before validate().
RunConfig run_config_from_json(const std::string& text, bool validate = true);
std::string run_config_to_json(const RunConfig& cfg);

/// Builds the untrained network a run config describes.
Network build_network(const RunConfig& cfg);

/// The result table's rows: (teacher group, row description) and the run
/// that reproduces each.
struct TableRow {
  std::string group;
  std::string description;
  RunConfig run;
};
std::vector<TableRow> table_rows();

}  // namespace MMKD_ABI
}  // namespace mmkd
