#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmkd/network.hpp"

namespace mmkd {
inline namespace MMKD_ABI {

/// Label in [-3, 3] to class 0..6: round half away from zero, clamp, shift.
int discretize_label(double y);

struct DatasetMeta {
  std::array<ModalityShape, 3> shapes{};  // indexed by Modality
  std::size_t n = 0;
  std::size_t num_classes = kNumClasses;
  std::optional<std::uint64_t> seed;

  const ModalityShape& shape(Modality m) const { return shapes[static_cast<std::size_t>(m)]; }
  std::size_t sample_size(Modality m) const { return shape(m).steps * shape(m).width; }
};

/// Feature arrays are kept in 32 bits regardless of the training precision;
/// that is what the on-disk format stores.
struct MultimodalDataset {
  DatasetMeta meta;
  std::array<std::vector<float>, 3> features;  // [N, T_m, D_m] each
  std::vector<float> labels;                   // [N], continuous

  std::size_t size() const { return meta.n; }
  const std::vector<float>& modality(Modality m) const { return features[static_cast<std::size_t>(m)]; }
  int label_class(std::size_t i) const { return discretize_label(labels.at(i)); }
  /// Throws Shape / Data errors when arrays disagree with the metadata.
  void validate() const;
  MultimodalDataset subset(const std::vector<std::size_t>& indices) const;
};

struct SyntheticSpec {
  std::size_t latent = 4;
  std::array<ModalityShape, 3> shapes{{{24, 8}, {12, 12}, {6, 16}}};
  std::array<double, 3> noise{1.2, 0.6, 0.6};  // sigma per modality
  /// Optional explicit mixing matrices [latent, D_m]; drawn from the seed when
  /// empty.
  std::array<std::vector<double>, 3> mixing{};
  /// Optional label functional [latent]; drawn (unit norm) when empty.
  std::vector<double> class_projection;
  double label_scale = 1.5;
  double skew = 0.0;  // shifts the continuous label before clamping
  double gain_depth = 0.5;
  std::size_t n = 2000;
  std::uint64_t seed = 0;

  /// Throws Config naming the offending field.
  void validate() const;
  const ModalityShape& shape(Modality m) const { return shapes[static_cast<std::size_t>(m)]; }
};

/// Pure function of the spec (seed included).
MultimodalDataset generate_synthetic(const SyntheticSpec& spec);

/// JSON form of a spec, used by the gen-data command. Unknown keys are
/// rejected with a Config error.
SyntheticSpec synthetic_spec_from_json(const std::string& text);
std::string synthetic_spec_to_json(const SyntheticSpec& spec);

inline constexpr std::uint8_t kDatasetFormatVersion = 1;

void save_dataset(const MultimodalDataset& ds, const std::filesystem::path& dir);
MultimodalDataset load_dataset(const std::filesystem::path& dir);

struct SplitIndices {
  std::vector<std::size_t> train, val, test;
};

/// Seeded shuffle; train and val sizes are rounded, test takes the remainder.
SplitIndices split_indices(std::size_t n, const std::array<double, 3>& fractions, std::uint64_t seed);

struct DatasetSplit {
  MultimodalDataset train, val, test;
};

DatasetSplit split(const MultimodalDataset& ds, const std::array<double, 3>& fractions, std::uint64_t seed);

struct LabeledBatch {
  Batch inputs;
  std::vector<int> labels;
};

/// Gathers the given samples of every modality into [B, T_m, D_m] tensors.
LabeledBatch make_batch(const MultimodalDataset& ds, const std::vector<std::size_t>& indices);

/// NetworkConfig whose modality shapes match the dataset.
NetworkConfig with_dataset_shapes(NetworkConfig cfg, const DatasetMeta& meta);

}  // namespace MMKD_ABI
}  // namespace mmkd
