#include "lesion/cascade.hpp"

#include <fstream>
#include <functional>
#include <optional>

#include "json.hpp"
#include "lesion/image_io.hpp"
#include "lesion/kernels.hpp"

namespace lesion {

Tensor extract_roi(const Tensor& image, const Tensor& mask) {
  require(mask.c() == 1, "mask must have one channel");
  require(image.n() == mask.n() && image.h() == mask.h() && image.w() == mask.w(),
          "image " + image.shape().str() + " and mask " + mask.shape().str() + " differ in shape");
  Tensor out(image.shape());
  const std::size_t pixels = mask.size();
  const int C = image.c();
  for (std::size_t p = 0; p < pixels; ++p) {
    const double m = mask[p];
    for (int ch = 0; ch < C; ++ch) {
      const std::size_t i = p * static_cast<std::size_t>(C) + static_cast<std::size_t>(ch);
      out[i] = m != 0.0 ? image[i] * m : 0.0;
    }
  }
  return out;
}

Tensor crop_to_mask_bbox(const Tensor& image, const Tensor& mask) {
  require(image.n() == 1 && mask.n() == 1, "bounding-box crop works on one image");
  require(image.h() == mask.h() && image.w() == mask.w(), "image and mask differ in shape");
  int y0 = mask.h(), y1 = -1, x0 = mask.w(), x1 = -1;
  for (int y = 0; y < mask.h(); ++y)
    for (int x = 0; x < mask.w(); ++x)
      if (mask(0, y, x, 0) != 0.0) {
        y0 = std::min(y0, y), y1 = std::max(y1, y);
        x0 = std::min(x0, x), x1 = std::max(x1, x);
      }
  if (y1 < 0) return image;
  Tensor out(Shape{1, y1 - y0 + 1, x1 - x0 + 1, image.c()});
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      for (int ch = 0; ch < image.c(); ++ch) out(0, y - y0, x - x0, ch) = image(0, y, x, ch);
  return out;
}

CascadeResult classify_roi(ClsModel& cls, const Tensor& image, const Tensor& mask, const RoiOptions& options) {
  CascadeResult r;
  r.mask = mask;
  r.roi_image = extract_roi(image, mask);
  Tensor input = options.crop_to_bbox ? crop_to_mask_bbox(r.roi_image, mask) : r.roi_image;
  const auto& cfg = cls.config();
  if (input.h() != cfg.input_height || input.w() != cfg.input_width)
    input = kernels::resize_bilinear(input, cfg.input_height, cfg.input_width);
  ClassPrediction pred = predict_class(cls, input);
  r.label = pred.label;
  r.probs = std::move(pred.probs);
  return r;
}

CascadeResult cascade_infer(SegModel& seg, ClsModel& cls, const Tensor& image, const RoiOptions& options) {
  return classify_roi(cls, image, predict_mask(seg, image, options.threshold), options);
}

void write_labels_csv(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << "image_id,class\n";
  for (const auto& s : manifest.samples) out << s.stem << ',' << lesion_class_name(s.label) << '\n';
  if (!out) throw Error("short write on '" + path.string() + "'");
}

namespace {

using MaskSource = std::function<Tensor(const Sample&, const Tensor& prepared_image)>;

DatasetManifest extract_all(const DatasetManifest& manifest, const NormalizationPolicy& policy,
                            const std::filesystem::path& out_dir, const RoiOptions& options,
                            const std::string& config_digest, const MaskSource& mask_for) {
  require(manifest.kind == DatasetKind::Classification, "ROI extraction needs a classification manifest");
  const auto images_dir = out_dir / "images";
  std::filesystem::create_directories(images_dir);

  DatasetManifest out = manifest;
  out.normalization.reset();
  const int N = static_cast<int>(manifest.samples.size());
  std::vector<std::optional<std::string>> errors(static_cast<std::size_t>(N));

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < N; ++i) {
    const Sample& s = manifest.samples[static_cast<std::size_t>(i)];
    const auto dst = images_dir / (s.stem + ".png");
    try {
      const Tensor image = prepare_image(read_rgb(s.image_path), policy);
      const Tensor mask = mask_for(s, image);
      Tensor roi = extract_roi(image, mask);
      if (options.crop_to_bbox) roi = crop_to_mask_bbox(roi, mask);
      for (double& v : roi.values()) v = policy.denormalize(v);
      write_png(dst, roi);
      out.samples[static_cast<std::size_t>(i)].image_path = dst;
      out.samples[static_cast<std::size_t>(i)].mask_path.clear();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = s.image_path.string() + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (e) throw Error("ROI extraction failed for " + *e);

  save_manifest(out, out_dir / "manifest.json");
  write_labels_csv(out, out_dir / "labels.csv");
  nlohmann::json meta{{"config_digest", config_digest},
                      {"n_samples", N},
                      {"crop_to_bbox", options.crop_to_bbox},
                      {"source_normalization", policy}};
  std::ofstream(out_dir / "roi.json") << meta.dump(2) << '\n';
  return out;
}

}  // namespace

DatasetManifest batch_extract_roi(SegModel& seg, const DatasetManifest& manifest,
                                  const NormalizationPolicy& policy, const std::filesystem::path& out_dir,
                                  const RoiOptions& options, const std::string& config_digest) {
  require(policy.height == seg.config().input_height && policy.width == seg.config().input_width,
          "normalization size does not match the segmenter input");
  return extract_all(manifest, policy, out_dir, options, config_digest,
                     [&](const Sample&, const Tensor& image) { return predict_mask(seg, image, options.threshold); });
}

DatasetManifest batch_extract_roi_from_masks(const DatasetManifest& manifest,
                                             const std::filesystem::path& masks_dir,
                                             const NormalizationPolicy& policy,
                                             const std::filesystem::path& out_dir, const RoiOptions& options,
                                             const std::string& config_digest) {
  return extract_all(manifest, policy, out_dir, options, config_digest,
                     [&](const Sample& s, const Tensor&) {
                       const auto path = masks_dir / (s.stem + ".png");
                       require(std::filesystem::exists(path), "missing mask '" + path.string() + "'");
                       return prepare_mask(read_gray(path), policy.height, policy.width);
                     });
}

}  // namespace lesion
