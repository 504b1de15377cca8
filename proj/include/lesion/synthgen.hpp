#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

enum class LesionShape { Disk, Ellipse };

struct SynthConfig {
  int n_samples = 8;
  int image_height = 64;
  int image_width = 64;
  LesionShape lesion_shape = LesionShape::Disk;
  int texture_classes = 7;
  double background_noise = 0.02;     // pixel noise std as a fraction of 255
  double distractor_strength = 0.0;   // 0 disables hair, vignette and decoys
  std::uint64_t seed = 0;
  std::vector<long long> class_counts;  // optional; overrides n_samples
  double min_radius_fraction = 0.15;    // of min(h, w)
  double max_radius_fraction = 0.30;

  void validate() const;
  int total_samples() const;
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

/// Ground-truth geometry of one generated lesion.
struct SynthLesion {
  std::string stem;
  int label = -1;  // -1 for segmentation data
  double cy = 0.0, cx = 0.0;
  double ry = 0.0, rx = 0.0;
  double angle = 0.0;  // radians, ellipse orientation
};

/// Pixel (y, x) is inside when its centre lies within the (rotated) ellipse.
bool inside_lesion(const SynthLesion& l, int y, int x);
/// Rasterized (1,h,w,1) mask of a lesion.
Tensor rasterize_lesion(const SynthLesion& l, int height, int width);

/// Mean RGB of class `k`'s lesion pigment in 8-bit units.
std::array<double, 3> class_pigment(int k);

/// In-memory render of one sample: (1,h,w,3) 8-bit RGB image and its geometry.
struct SynthSample {
  Tensor image;
  Tensor mask;
  SynthLesion lesion;
};

SynthSample render_seg_sample(const SynthConfig& config, int index);
SynthSample render_cls_sample(const SynthConfig& config, int index, int label);

/// Labels assigned to each sample index: class_counts in class order when
/// given, otherwise round-robin over texture_classes.
std::vector<int> synth_labels(const SynthConfig& config);

/// root/images/*.png, root/masks/*.png, root/synth.json.
std::vector<SynthLesion> generate_seg_dataset(const SynthConfig& config, const std::filesystem::path& root);
/// Same plus root/labels.csv (image_id,class).
std::vector<SynthLesion> generate_cls_dataset(const SynthConfig& config, const std::filesystem::path& root);

}  // namespace lesion
