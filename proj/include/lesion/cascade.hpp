#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lesion/clsmodel.hpp"
#include "lesion/dataio.hpp"
#include "lesion/segmodel.hpp"

namespace lesion {

struct RoiOptions {
  bool crop_to_bbox = false;  // default keeps the full masked frame
  double threshold = 0.5;
};

/// image * mask, broadcast over channels. Background is 0 in normalized units.
/// image is (n,h,w,c), mask is (n,h,w,1) in {0,1}.
Tensor extract_roi(const Tensor& image, const Tensor& mask);

/// Crop a batch-of-one tensor to the bounding box of a (1,h,w,1) mask. An
/// empty mask leaves the tensor unchanged.
Tensor crop_to_mask_bbox(const Tensor& image, const Tensor& mask);

struct CascadeResult {
  Tensor mask;       // (1,h,w,1) at the segmenter's input size
  Tensor roi_image;  // image * mask, before the classifier resize
  int label = 0;
  std::vector<double> probs;
};

/// Classify the ROI cut from `image` by a given mask.
CascadeResult classify_roi(ClsModel& cls, const Tensor& image, const Tensor& mask,
                           const RoiOptions& options = {});

/// Segment, extract the ROI, resize it to the classifier input, classify.
/// `image` is a normalized (1,h,w,c) tensor at the segmenter's input size.
CascadeResult cascade_infer(SegModel& seg, ClsModel& cls, const Tensor& image,
                            const RoiOptions& options = {});

/// Writes out_dir/images/<stem>.png (8-bit ROI at the policy size),
/// out_dir/labels.csv and out_dir/manifest.json. Output order = input order.
DatasetManifest batch_extract_roi(SegModel& seg, const DatasetManifest& manifest,
                                  const NormalizationPolicy& policy,
                                  const std::filesystem::path& out_dir,
                                  const RoiOptions& options = {},
                                  const std::string& config_digest = "");

/// Same layout, but the masks come from masks_dir/<stem>.png (ground truth).
DatasetManifest batch_extract_roi_from_masks(const DatasetManifest& manifest,
                                             const std::filesystem::path& masks_dir,
                                             const NormalizationPolicy& policy,
                                             const std::filesystem::path& out_dir,
                                             const RoiOptions& options = {},
                                             const std::string& config_digest = "");

/// labels.csv in the classification layout: image_id,class.
void write_labels_csv(const DatasetManifest& manifest, const std::filesystem::path& path);

}  // namespace lesion
