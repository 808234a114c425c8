#include "mmkd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json_io.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

using json_io::json;

namespace {
constexpr char kMagic[4] = {'M', 'M', 'K', 'C'};

json description_json(const Network& net) {
  json j{{"role", net.role() == Role::Teacher ? "teacher" : "student"},
         {"network", json_io::network_config_to_json(net.config())}};
  if (net.role() == Role::Teacher) {
    j["branch"] = branch_name(net.branch());
  } else {
    j["config"] = net.student_config();
  }
  return j;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}
}  // namespace

std::string network_description(const Network& net) { return description_json(net).dump(); }

std::uint64_t config_hash(const Network& net) { return json_io::fnv1a(network_description(net)); }

void save_checkpoint(const Network& net, const std::filesystem::path& path, std::uint64_t seed,
                     const std::string& run_json) {
  json manifest;
  manifest["description"] = description_json(net);
  manifest["config_hash"] = hex64(config_hash(net));
  manifest["seed"] = seed;
  manifest["run"] = json_io::parse(run_json, ErrorKind::Config, "run description");

  std::string blob;
  std::uint64_t offset = 0;
  for (const auto& [name, p] : net.parameters()) {
    manifest["params"].push_back({{"name", name}, {"shape", p.shape()}, {"offset", offset}});
    for (Real v : p.data()) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
      for (int b = 0; b < 4; ++b) blob.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
    }
    offset += p.numel() * 4;
  }
  manifest["blob_bytes"] = blob.size();
  const std::string mtext = manifest.dump();

  std::string out(kMagic, 4);
  out.push_back(static_cast<char>(kCheckpointVersion));
  const auto len = static_cast<std::uint32_t>(mtext.size());
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((len >> (8 * b)) & 0xFF));
  out += mtext;
  out += blob;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error(ErrorKind::Io, "short write to " + path.string());
}

Network load_checkpoint(const std::filesystem::path& path, const LoadOptions& opts, CheckpointInfo* info) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open checkpoint " + path.string());
  const std::string raw{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};

  if (raw.size() < 5 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::Format, path.string() + " is not a checkpoint (bad magic)");
  }
  if (static_cast<std::uint8_t>(raw[4]) != kCheckpointVersion) {
    throw Error(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(static_cast<int>(raw[4])));
  }
  if (raw.size() < 9) throw Error(ErrorKind::Truncated, "checkpoint ends inside its header");
  std::uint32_t mlen = 0;
  for (int b = 0; b < 4; ++b) mlen |= static_cast<std::uint32_t>(static_cast<unsigned char>(raw[5 + b])) << (8 * b);
  if (raw.size() - 9 < mlen) throw Error(ErrorKind::Truncated, "checkpoint ends inside its manifest");
  const std::string_view blob(raw.data() + 9 + mlen, raw.size() - 9 - mlen);

  Network net;
  CheckpointInfo ci;
  try {
    const json manifest = json::parse(raw.substr(9, mlen));
    const json& desc = manifest.at("description");
    ci.description = desc.dump();
    ci.config_hash = std::stoull(manifest.at("config_hash").get<std::string>(), nullptr, 16);
    ci.seed = manifest.at("seed").get<std::uint64_t>();
    ci.run = manifest.at("run").dump();
    if (json_io::fnv1a(ci.description) != ci.config_hash) {
      throw Error(ErrorKind::Manifest, "checkpoint config hash does not match its description");
    }
    if (opts.expected_config_hash && *opts.expected_config_hash != ci.config_hash && !opts.force) {
      throw Error(ErrorKind::Config, "checkpoint architecture hash " + hex64(ci.config_hash) + " differs from the expected " +
                                         hex64(*opts.expected_config_hash) + " (use force to override)");
    }
    const NetworkConfig cfg = json_io::network_config_from_json(desc.at("network"), NetworkConfig{}, "checkpoint");
    const std::string role = desc.at("role").get<std::string>();
    if (role == "teacher") {
      net = build_teacher(branch_from_name(desc.at("branch").get<std::string>()), cfg, ci.seed);
    } else if (role == "student") {
      net = build_student(desc.at("config").get<int>(), cfg, ci.seed);
    } else {
      throw Error(ErrorKind::Manifest, "unknown role '" + role + "'");
    }

    const std::uint64_t blob_bytes = manifest.at("blob_bytes").get<std::uint64_t>();
    if (blob.size() < blob_bytes) {
      throw Error(ErrorKind::Truncated, "parameter blob holds " + std::to_string(blob.size()) + " of " +
                                            std::to_string(blob_bytes) + " bytes");
    }
    if (blob.size() > blob_bytes) throw Error(ErrorKind::Manifest, "trailing bytes after the parameter blob");

    const json& entries = manifest.at("params");
    const ParamList params = net.parameters();
    if (entries.size() != params.size()) throw Error(ErrorKind::Manifest, "parameter count differs from the architecture");
    for (std::size_t i = 0; i < params.size(); ++i) {
      const json& e = entries[i];
      Tensor p = params[i].second;
      if (e.at("name").get<std::string>() != params[i].first || e.at("shape").get<Shape>() != p.shape()) {
        throw Error(ErrorKind::Manifest, "parameter " + params[i].first + " does not match the manifest entry");
      }
      const std::uint64_t off = e.at("offset").get<std::uint64_t>();
      if (off + p.numel() * 4 > blob_bytes) throw Error(ErrorKind::Manifest, "parameter offset past the blob");
      auto dst = p.mutable_data();
      for (std::size_t k = 0; k < dst.size(); ++k) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b)
          bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[off + k * 4 + b])) << (8 * b);
        dst[k] = static_cast<Real>(std::bit_cast<float>(bits));
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Manifest, std::string("checkpoint manifest is malformed: ") + e.what());
  } catch (const std::invalid_argument&) {
    throw Error(ErrorKind::Manifest, "checkpoint config hash is not hexadecimal");
  } catch (const std::out_of_range&) {
    throw Error(ErrorKind::Manifest, "checkpoint config hash is out of range");
  }
  if (info) *info = ci;
  return net;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
