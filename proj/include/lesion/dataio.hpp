#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

enum class Split { Train, Test };
std::string_view to_string(Split s);
Split parse_split(std::string_view s);

enum class DatasetKind { Segmentation, Classification };

enum class NormMode { UnitInterval, SymmetricUnit };
std::string_view to_string(NormMode m);
NormMode parse_norm_mode(std::string_view s);

struct NormalizationPolicy {
  NormMode mode = NormMode::UnitInterval;
  int height = 512;
  int width = 512;

  double lower() const { return mode == NormMode::UnitInterval ? 0.0 : -1.0; }
  double upper() const { return 1.0; }
  double normalize(double v8) const;
  double denormalize(double v) const;
  bool operator==(const NormalizationPolicy&) const = default;
};

void to_json(nlohmann::json& j, const NormalizationPolicy& p);
void from_json(const nlohmann::json& j, NormalizationPolicy& p);

/// One dataset entry. Segmentation samples carry a mask path; classification
/// samples carry a label index.
struct Sample {
  std::string stem;
  std::filesystem::path image_path;
  std::filesystem::path mask_path;
  int label = -1;
  Split split = Split::Train;
};

struct DatasetManifest {
  DatasetKind kind = DatasetKind::Segmentation;
  std::vector<Sample> samples;
  std::map<std::string, long long> class_counts;
  std::uint64_t seed = 0;
  double split_fraction = 0.0;  // 0 until split() runs
  std::optional<NormalizationPolicy> normalization;

  std::size_t size() const { return samples.size(); }
  /// Samples in the given split, manifest order preserved.
  DatasetManifest subset(Split s) const;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// root/images/*.{png,jpg,jpeg} paired with root/masks/*.png by stem (a mask
/// named <stem>_segmentation.png also matches). Ordered by stem.
DatasetManifest load_seg_manifest(const std::filesystem::path& root_dir);

/// root/images/<image_id>.{png,jpg,jpeg} labelled by a CSV with columns
/// image_id and class (or dx). Class names are matched case-insensitively.
DatasetManifest load_cls_manifest(const std::filesystem::path& root_dir,
                                  const std::filesystem::path& labels_csv);

/// Deterministic train/test assignment; train count is floor(N * fraction).
/// Segmentation splits are uniform; classification splits are stratified.
DatasetManifest split(const DatasetManifest& manifest, double train_fraction, std::uint64_t seed);

struct Batch {
  Tensor images;            // (n, h, w, 3) normalized
  Tensor masks;             // (n, h, w, 1) in {0,1}; empty for classification
  std::vector<int> labels;  // empty for segmentation
};

/// Decode, resize (bilinear images, nearest masks), and normalize samples in
/// manifest order. Masks are binarized at 127.5 before resizing.
Batch load_batch(const std::vector<Sample>& samples, const NormalizationPolicy& policy);

/// Normalize a (1,h,w,c) 8-bit tensor and resize it to the policy size.
Tensor prepare_image(const Tensor& rgb8, const NormalizationPolicy& policy);
Tensor prepare_mask(const Tensor& gray8, int height, int width);

}  // namespace lesion
