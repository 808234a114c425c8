#include "mmkd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "json_io.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

using nlohmann::json;

int discretize_label(double y) {
  if (std::isnan(y)) throw Error(ErrorKind::Data, "label is NaN");
  // std::round rounds halfway cases away from zero.
  const double r = std::clamp(std::round(y), -3.0, 3.0);
  return static_cast<int>(r) + 3;
}

void MultimodalDataset::validate() const {
  for (auto m : kModalities) {
    if (modality(m).size() != meta.n * meta.sample_size(m)) {
      throw Error(ErrorKind::Shape, std::string(modality_name(m)) + " holds " + std::to_string(modality(m).size()) +
                                        " values, metadata implies " +
                                        std::to_string(meta.n * meta.sample_size(m)));
    }
  }
  if (labels.size() != meta.n) {
    throw Error(ErrorKind::Shape, "labels hold " + std::to_string(labels.size()) + " values for N=" +
                                      std::to_string(meta.n));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (!(labels[i] >= -3.0f && labels[i] <= 3.0f)) {
      throw Error(ErrorKind::Data, "label " + std::to_string(i) + " = " + std::to_string(labels[i]) +
                                       " is outside [-3, 3]");
    }
  }
}

MultimodalDataset MultimodalDataset::subset(const std::vector<std::size_t>& indices) const {
  MultimodalDataset out;
  out.meta = meta;
  out.meta.n = indices.size();
  for (auto m : kModalities) {
    const std::size_t len = meta.sample_size(m);
    const auto& src = modality(m);
    auto& dst = out.features[static_cast<std::size_t>(m)];
    dst.reserve(indices.size() * len);
    for (auto i : indices) {
      if (i >= meta.n) throw Error(ErrorKind::Data, "sample index " + std::to_string(i) + " out of range");
      dst.insert(dst.end(), src.begin() + static_cast<std::ptrdiff_t>(i * len),
                 src.begin() + static_cast<std::ptrdiff_t>((i + 1) * len));
    }
  }
  for (auto i : indices) out.labels.push_back(labels[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

void SyntheticSpec::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorKind::Config, "synthetic spec field '" + field + "' " + why);
  };
  if (latent == 0) fail("latent", "must be positive");
  if (n == 0) fail("n", "must be positive");
  for (auto m : kModalities) {
    const auto idx = static_cast<std::size_t>(m);
    const std::string name = modality_name(m);
    if (shapes[idx].steps == 0 || shapes[idx].width == 0) fail("shapes." + name, "needs positive steps and width");
    if (!(noise[idx] >= 0.0) || !std::isfinite(noise[idx])) fail("noise." + name, "must be finite and >= 0");
    if (!mixing[idx].empty() && mixing[idx].size() != latent * shapes[idx].width) {
      fail("mixing." + name, "must hold latent x width = " + std::to_string(latent * shapes[idx].width) + " values");
    }
  }
  if (!class_projection.empty() && class_projection.size() != latent) {
    fail("class_projection", "must hold " + std::to_string(latent) + " values");
  }
  if (!(label_scale > 0.0) || !std::isfinite(label_scale)) fail("label_scale", "must be finite and > 0");
  if (!std::isfinite(skew)) fail("skew", "must be finite");
  if (!(gain_depth >= 0.0 && gain_depth < 1.0)) fail("gain_depth", "must lie in [0, 1)");
}

MultimodalDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const std::size_t k = spec.latent;

  std::array<std::vector<double>, 3> mixing = spec.mixing;
  for (auto m : kModalities) {
    auto& a = mixing[static_cast<std::size_t>(m)];
    if (a.empty()) {
      a.resize(k * spec.shape(m).width);
      for (auto& v : a) v = normal(rng) / std::sqrt(static_cast<double>(k));
    }
  }
  std::vector<double> w = spec.class_projection;
  if (w.empty()) {
    w.resize(k);
    double norm = 0;
    for (auto& v : w) {
      v = normal(rng);
      norm += v * v;
    }
    for (auto& v : w) v /= std::sqrt(norm);
  }

  MultimodalDataset ds;
  ds.meta.n = spec.n;
  ds.meta.shapes = spec.shapes;
  ds.meta.seed = spec.seed;
  for (auto m : kModalities) ds.features[static_cast<std::size_t>(m)].reserve(spec.n * ds.meta.sample_size(m));
  ds.labels.reserve(spec.n);

  std::vector<double> z(k), clean;
  for (std::size_t i = 0; i < spec.n; ++i) {
    double u = spec.skew;
    for (std::size_t j = 0; j < k; ++j) {
      z[j] = normal(rng);
      u += spec.label_scale * w[j] * z[j];
    }
    ds.labels.push_back(static_cast<float>(std::clamp(u, -3.0, 3.0)));

    for (auto m : kModalities) {
      const auto idx = static_cast<std::size_t>(m);
      const auto [steps, width] = spec.shape(m);
      const auto& a = mixing[idx];
      clean.assign(width, 0.0);
      for (std::size_t j = 0; j < k; ++j)
        for (std::size_t d = 0; d < width; ++d) clean[d] += z[j] * a[j * width + d];
      const double phi = phase(rng);
      auto& out = ds.features[idx];
      for (std::size_t t = 0; t < steps; ++t) {
        const double g = 1.0 + spec.gain_depth * std::sin(2.0 * std::numbers::pi * static_cast<double>(t) /
                                                                  static_cast<double>(steps) + phi);
        for (std::size_t d = 0; d < width; ++d) {
          out.push_back(static_cast<float>(g * clean[d] + spec.noise[idx] * normal(rng)));
        }
      }
    }
  }
  return ds;
}

using json_io::reject_unknown;

namespace {

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw Error(ErrorKind::Config, "field '" + std::string(key) + "' in " + where + " is missing or has the wrong type");
  }
}

}  // namespace

SyntheticSpec synthetic_spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Config, std::string("synthetic spec is not valid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"latent", "shapes", "noise", "mixing", "class_projection", "label_scale", "skew", "gain_depth", "n",
                  "seed"},
                 "synthetic spec");
  SyntheticSpec s;
  if (j.contains("latent")) s.latent = get_field<std::size_t>(j, "latent", "synthetic spec");
  if (j.contains("n")) s.n = get_field<std::size_t>(j, "n", "synthetic spec");
  if (j.contains("seed")) s.seed = get_field<std::uint64_t>(j, "seed", "synthetic spec");
  if (j.contains("label_scale")) s.label_scale = get_field<double>(j, "label_scale", "synthetic spec");
  if (j.contains("skew")) s.skew = get_field<double>(j, "skew", "synthetic spec");
  if (j.contains("gain_depth")) s.gain_depth = get_field<double>(j, "gain_depth", "synthetic spec");
  if (j.contains("class_projection"))
    s.class_projection = get_field<std::vector<double>>(j, "class_projection", "synthetic spec");
  const auto per_modality = [&](const char* key, auto&& apply) {
    if (!j.contains(key)) return;
    const json& sub = j.at(key);
    reject_unknown(sub, {"video", "audio", "language"}, std::string("'") + key + "'");
    for (auto m : kModalities) {
      if (sub.contains(modality_name(m))) apply(m, sub.at(modality_name(m)), std::string(key) + "." + modality_name(m));
    }
  };
  per_modality("shapes", [&](Modality m, const json& v, const std::string& where) {
    reject_unknown(v, {"steps", "width"}, where);
    auto& sh = s.shapes[static_cast<std::size_t>(m)];
    if (v.contains("steps")) sh.steps = get_field<std::size_t>(v, "steps", where);
    if (v.contains("width")) sh.width = get_field<std::size_t>(v, "width", where);
  });
  per_modality("noise", [&](Modality m, const json& v, const std::string& where) {
    if (!v.is_number()) throw Error(ErrorKind::Config, where + " must be a number");
    s.noise[static_cast<std::size_t>(m)] = v.get<double>();
  });
  per_modality("mixing", [&](Modality m, const json& v, const std::string& where) {
    if (!v.is_array()) throw Error(ErrorKind::Config, where + " must be a flat array");
    s.mixing[static_cast<std::size_t>(m)] = v.get<std::vector<double>>();
  });
  s.validate();
  return s;
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  json j;
  j["latent"] = s.latent;
  j["n"] = s.n;
  j["seed"] = s.seed;
  j["label_scale"] = s.label_scale;
  j["skew"] = s.skew;
  j["gain_depth"] = s.gain_depth;
  for (auto m : kModalities) {
    const auto idx = static_cast<std::size_t>(m);
    j["shapes"][modality_name(m)] = {{"steps", s.shapes[idx].steps}, {"width", s.shapes[idx].width}};
    j["noise"][modality_name(m)] = s.noise[idx];
    if (!s.mixing[idx].empty()) j["mixing"][modality_name(m)] = s.mixing[idx];
  }
  if (!s.class_projection.empty()) j["class_projection"] = s.class_projection;
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// On-disk format

namespace {

constexpr char kMagic[4] = {'M', 'M', 'K', 'D'};
constexpr const char* kManifestFile = "manifest.bin";
constexpr const char* kMetaFile = "meta.json";
constexpr const char* kLabelsFile = "labels.bin";

std::string bin_name(Modality m) { return std::string(modality_name(m)) + ".bin"; }

template <typename T>
void put_le(std::string& out, T v) {
  static_assert(std::is_integral_v<T>);
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::string floats_le(const std::vector<float>& v) {
  std::string out(v.size() * 4, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

std::vector<float> floats_from_le(const std::string& bytes) {
  std::vector<float> v(bytes.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i * 4 + b])) << (8 * b);
    v[i] = std::bit_cast<float>(bits);
  }
  return v;
}

void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + p.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorKind::Io, "short write to " + p.string());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorKind::Io, "cannot open " + p.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

struct ManifestEntry {
  std::string name;
  std::uint64_t bytes = 0;
};

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<unsigned char>(s_[pos_++])) << (8 * i);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw Error(ErrorKind::Manifest, "manifest ends unexpectedly");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

std::vector<ManifestEntry> parse_manifest(const std::string& raw) {
  if (raw.size() < 5 || std::memcmp(raw.data(), kMagic, 4) != 0) {
    throw Error(ErrorKind::Format, "dataset manifest lacks the MMKD magic");
  }
  const auto version = static_cast<std::uint8_t>(raw[4]);
  if (version != kDatasetFormatVersion) {
    throw Error(ErrorKind::Format, "unsupported dataset format version " + std::to_string(version));
  }
  Reader r(raw);
  r.bytes(5);
  const auto count = r.get<std::uint32_t>();
  std::vector<ManifestEntry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    ManifestEntry e;
    e.name = r.bytes(r.get<std::uint16_t>());
    e.bytes = r.get<std::uint64_t>();
    entries.push_back(std::move(e));
  }
  if (!r.done()) throw Error(ErrorKind::Manifest, "trailing bytes after the manifest entries");
  return entries;
}

std::string meta_to_json(const DatasetMeta& meta) {
  json j;
  j["n"] = meta.n;
  j["num_classes"] = meta.num_classes;
  if (meta.seed) j["seed"] = *meta.seed;
  for (auto m : kModalities) {
    j["modalities"].push_back(
        {{"name", modality_name(m)}, {"steps", meta.shape(m).steps}, {"dims", meta.shape(m).width}});
  }
  return j.dump(2) + "\n";
}

DatasetMeta meta_from_json(const std::string& text) {
  DatasetMeta meta;
  try {
    const json j = json::parse(text);
    meta.n = j.at("n").get<std::size_t>();
    meta.num_classes = j.at("num_classes").get<std::size_t>();
    if (j.contains("seed")) meta.seed = j.at("seed").get<std::uint64_t>();
    std::set<Modality> seen;
    for (const auto& e : j.at("modalities")) {
      const Modality m = modality_from_name(e.at("name").get<std::string>());
      seen.insert(m);
      meta.shapes[static_cast<std::size_t>(m)] = {e.at("steps").get<std::size_t>(), e.at("dims").get<std::size_t>()};
    }
    if (seen.size() != kModalities.size()) throw Error(ErrorKind::Format, "meta.json must describe all three modalities");
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Format, std::string("meta.json is malformed: ") + e.what());
  }
  if (meta.num_classes != kNumClasses) {
    throw Error(ErrorKind::Format, "meta.json declares " + std::to_string(meta.num_classes) + " classes, expected 7");
  }
  return meta;
}

}  // namespace

void save_dataset(const MultimodalDataset& ds, const std::filesystem::path& dir) {
  ds.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());

  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back(kMetaFile, meta_to_json(ds.meta));
  for (auto m : kModalities) files.emplace_back(bin_name(m), floats_le(ds.modality(m)));
  files.emplace_back(kLabelsFile, floats_le(ds.labels));

  std::string manifest(kMagic, 4);
  manifest.push_back(static_cast<char>(kDatasetFormatVersion));
  put_le<std::uint32_t>(manifest, static_cast<std::uint32_t>(files.size()));
  for (const auto& [name, bytes] : files) {
    write_file(dir / name, bytes);
    put_le<std::uint16_t>(manifest, static_cast<std::uint16_t>(name.size()));
    manifest += name;
    put_le<std::uint64_t>(manifest, bytes.size());
  }
  write_file(dir / kManifestFile, manifest);
}

MultimodalDataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::Io, "dataset directory " + dir.string() + " not found");
  const auto entries = parse_manifest(read_file(dir / kManifestFile));
  const auto expected_bytes = [&](const std::string& name) {
    for (const auto& e : entries)
      if (e.name == name) return e.bytes;
    throw Error(ErrorKind::Manifest, "manifest does not list " + name);
  };
  const auto read_checked = [&](const std::string& name) {
    const std::uint64_t want = expected_bytes(name);
    std::string bytes = read_file(dir / name);
    if (bytes.size() < want) {
      throw Error(ErrorKind::Truncated, name + " has " + std::to_string(bytes.size()) + " bytes, manifest says " +
                                            std::to_string(want));
    }
    if (bytes.size() > want) {
      throw Error(ErrorKind::Manifest, name + " is longer than the manifest records");
    }
    return bytes;
  };

  MultimodalDataset ds;
  ds.meta = meta_from_json(read_checked(kMetaFile));
  const auto check_shape = [&](const std::string& name, std::size_t values) {
    const std::uint64_t want = expected_bytes(name);
    if (want != values * 4) {
      throw Error(ErrorKind::Shape, "meta.json implies " + std::to_string(values) + " values in " + name +
                                        " but the manifest records " + std::to_string(want) + " bytes");
    }
  };
  for (auto m : kModalities) check_shape(bin_name(m), ds.meta.n * ds.meta.sample_size(m));
  check_shape(kLabelsFile, ds.meta.n);

  for (auto m : kModalities) ds.features[static_cast<std::size_t>(m)] = floats_from_le(read_checked(bin_name(m)));
  ds.labels = floats_from_le(read_checked(kLabelsFile));
  ds.validate();
  return ds;
}

// ---------------------------------------------------------------------------

SplitIndices split_indices(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed) {
  double total = 0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw Error(ErrorKind::Parameter, "split fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::Parameter, "split fractions must sum to 1");
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n) {
    throw Error(ErrorKind::Data, "split of " + std::to_string(n) + " samples leaves an empty part");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  return s;
}

DatasetSplit split(const MultimodalDataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed) {
  const SplitIndices idx = split_indices(ds.size(), fractions, seed);
  return {ds.subset(idx.train), ds.subset(idx.val), ds.subset(idx.test)};
}

LabeledBatch make_batch(const MultimodalDataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw Error(ErrorKind::Data, "empty batch");
  LabeledBatch b;
  for (auto m : kModalities) {
    const auto [steps, width] = ds.meta.shape(m);
    const std::size_t len = steps * width;
    const auto& src = ds.modality(m);
    std::vector<Real> v;
    v.reserve(indices.size() * len);
    for (auto i : indices) {
      if (i >= ds.size()) throw Error(ErrorKind::Data, "sample index " + std::to_string(i) + " out of range");
      for (std::size_t j = 0; j < len; ++j) v.push_back(static_cast<Real>(src[i * len + j]));
    }
    b.inputs.emplace(m, Tensor({indices.size(), steps, width}, std::move(v)));
  }
  for (auto i : indices) b.labels.push_back(ds.label_class(i));
  return b;
}

NetworkConfig with_dataset_shapes(NetworkConfig cfg, const DatasetMeta& meta) {
  cfg.modalities = meta.shapes;
  return cfg;
}

}  // namespace MMKD_ABI
}  // namespace mmkd
