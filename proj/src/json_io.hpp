#pragma once

// JSON helpers shared by the persistence and configuration code.

#include <algorithm>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "mmkd/network.hpp"

namespace mmkd {
inline namespace MMKD_ABI {
namespace json_io {

using nlohmann::json;

inline void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::Config, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw Error(ErrorKind::Config, "unknown field '" + key + "' in " + where);
    }
  }
}

/// Reads `key` into `out` when present; wrong types are Config errors.
template <typename T>
void read_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Config, "field '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

inline json parse(const std::string& text, ErrorKind kind, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(kind, what + " is not valid JSON: " + e.what());
  }
}

inline json network_config_to_json(const NetworkConfig& c) {
  json j{{"d_model", c.d_model},         {"heads", c.heads},
         {"layers", c.layers},           {"ffn_ratio", c.ffn_ratio},
         {"head_hidden", c.head_hidden}, {"conv_kernel", c.conv_kernel},
         {"num_classes", c.num_classes}, {"student_downsample", c.student_downsample}};
  for (auto m : kModalities) j["modalities"][modality_name(m)] = {{"steps", c.shape(m).steps}, {"width", c.shape(m).width}};
  return j;
}

/// Applies the fields present in `j` on top of `base`.
inline NetworkConfig network_config_from_json(const json& j, NetworkConfig base, const std::string& where) {
  reject_unknown(j,
                 {"d_model", "heads", "layers", "ffn_ratio", "head_hidden", "conv_kernel", "num_classes",
                  "student_downsample", "modalities"},
                 where);
  read_opt(j, "d_model", base.d_model, where);
  read_opt(j, "heads", base.heads, where);
  read_opt(j, "layers", base.layers, where);
  read_opt(j, "ffn_ratio", base.ffn_ratio, where);
  read_opt(j, "head_hidden", base.head_hidden, where);
  read_opt(j, "conv_kernel", base.conv_kernel, where);
  read_opt(j, "num_classes", base.num_classes, where);
  read_opt(j, "student_downsample", base.student_downsample, where);
  if (j.contains("modalities")) {
    const json& mj = j.at("modalities");
    reject_unknown(mj, {"video", "audio", "language"}, where + ".modalities");
    for (auto m : kModalities) {
      if (!mj.contains(modality_name(m))) continue;
      const std::string sub = where + ".modalities." + modality_name(m);
      const json& e = mj.at(modality_name(m));
      reject_unknown(e, {"steps", "width"}, sub);
      read_opt(e, "steps", base.shape(m).steps, sub);
      read_opt(e, "width", base.shape(m).width, sub);
    }
  }
  return base;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace json_io
}  // namespace MMKD_ABI
}  // namespace mmkd
