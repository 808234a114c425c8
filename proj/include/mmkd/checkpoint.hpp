#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "mmkd/network.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

inline constexpr std::uint8_t kCheckpointVersion = 1;

/// Canonical JSON of what a network is (role, branch or config, shapes).
std::string network_description(const Network& net);
/// FNV-1a of network_description; identifies an architecture.
std::uint64_t config_hash(const Network& net);

struct CheckpointInfo {
  std::string description;  // canonical JSON
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string run;  // free-form JSON stored alongside (e.g. the run config)
};

/// Layout: "MMKC", version byte, u32 manifest length, manifest JSON, then the
/// parameters as little-endian float32 in manifest order.
void save_checkpoint(const Network& net, const std::filesystem::path& path, std::uint64_t seed,
                     const std::string& run_json = "{}");

struct LoadOptions {
  std::optional<std::uint64_t> expected_config_hash;
  bool force = false;  // accept a config-hash mismatch
};

Network load_checkpoint(const std::filesystem::path& path, const LoadOptions& opts = {},
                        CheckpointInfo* info = nullptr);

}  // namespace MMKD_ABI
}  // namespace mmkd
