#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "lesion/cascade.hpp"
#include "lesion/classes.hpp"
#include "lesion/image_io.hpp"
#include "lesion/metrics.hpp"
#include "lesion/synthgen.hpp"
#include "test_util.hpp"

using namespace lesion;
using nn::Pass;
using testutil::max_abs_diff;
using testutil::random_mask;
using testutil::random_tensor;
using testutil::TempDir;

namespace {

SegModelConfig seg32() {
  BackboneScale scale;
  scale.stem_width = 4;
  scale.width_cap = 8;
  SegModelConfig c;
  c.backbone = default_backbone("efficientnet", 16, scale);
  c.decoder_widths = {8, 8, 4, 4};
  c.input_height = c.input_width = 32;
  return c;
}

ClsModelConfig cls32() {
  BackboneScale scale;
  scale.stem_width = 4;
  scale.width_cap = 8;
  ClsModelConfig c;
  c.backbone = default_backbone("mobilenet", 32, scale);
  c.input_height = c.input_width = 32;
  c.head_width = 8;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Mean 8-bit RGB over the pixels where mask == want.
std::array<double, 3> masked_mean(const Tensor& img, const Tensor& mask, double want) {
  std::array<double, 3> s{0, 0, 0};
  int n = 0;
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x)
      if (mask(0, y, x, 0) == want) {
        for (int c = 0; c < 3; ++c) s[static_cast<std::size_t>(c)] += img(0, y, x, c);
        ++n;
      }
  for (double& v : s) v /= std::max(n, 1);
  return s;
}

int nearest(const std::array<double, 3>& f, const std::vector<std::array<double, 3>>& centroids) {
  int best = 0;
  double bd = INFINITY;
  for (std::size_t k = 0; k < centroids.size(); ++k) {
    double d = 0.0;
    for (int c = 0; c < 3; ++c) d += std::pow(f[static_cast<std::size_t>(c)] - centroids[k][static_cast<std::size_t>(c)], 2);
    if (d < bd) bd = d, best = static_cast<int>(k);
  }
  return best;
}

std::vector<std::array<double, 3>> class_centroids(const SynthConfig& cfg, bool lesion_side) {
  std::vector<std::array<double, 3>> sum(7, {0, 0, 0});
  std::vector<int> n(7, 0);
  const auto labels = synth_labels(cfg);
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const SynthSample s = render_cls_sample(cfg, i, labels[static_cast<std::size_t>(i)]);
    const auto f = masked_mean(s.image, s.mask, lesion_side ? 1.0 : 0.0);
    for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])][static_cast<std::size_t>(c)] += f[static_cast<std::size_t>(c)];
    ++n[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (std::size_t k = 0; k < 7; ++k)
    for (double& v : sum[k]) v /= std::max(n[k], 1);
  return sum;
}

double centroid_accuracy(const SynthConfig& train, const SynthConfig& test, bool lesion_side) {
  const auto centroids = class_centroids(train, lesion_side);
  const auto labels = synth_labels(test);
  int correct = 0;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const SynthSample s = render_cls_sample(test, i, labels[static_cast<std::size_t>(i)]);
    correct += nearest(masked_mean(s.image, s.mask, lesion_side ? 1.0 : 0.0), centroids) ==
               labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

}  // namespace

TEST(ExtractRoi, Examples) {
  const Tensor img = random_tensor(Shape{2, 5, 6, 3}, 1);
  EXPECT_EQ(max_abs_diff(extract_roi(img, Tensor(Shape{2, 5, 6, 1}, 1.0)), img), 0.0);
  EXPECT_EQ(extract_roi(img, Tensor(Shape{2, 5, 6, 1}, 0.0)).max(), 0.0);
  EXPECT_EQ(extract_roi(img, Tensor(Shape{2, 5, 6, 1}, 0.0)).min(), 0.0);

  Tensor checker(Shape{1, 4, 4, 1});
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) checker(0, y, x, 0) = (x + y) % 2;
  const Tensor roi = extract_roi(Tensor(Shape{1, 4, 4, 3}, 0.7), checker);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(roi(0, y, x, c), (x + y) % 2 ? 0.7 : 0.0);

  EXPECT_THROW(extract_roi(img, Tensor(Shape{2, 5, 5, 1})), Error);
}

// Property: idempotent, supported on the mask, identical to the input there.
TEST(ExtractRoiProperty, IdempotentAndSupported) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape s{1 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 9), 1 + static_cast<int>(rng() % 9),
                  1 + static_cast<int>(rng() % 3)};
    const Tensor img = random_tensor(s, rng(), -1, 1);
    const Tensor mask = random_mask(Shape{s.n, s.h, s.w, 1}, rng(), 0.1 + 0.8 * (trial % 5) / 4.0);
    const Tensor once = extract_roi(img, mask);
    EXPECT_EQ(max_abs_diff(extract_roi(once, mask), once), 0.0);
    for (int n = 0; n < s.n; ++n)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          for (int c = 0; c < s.c; ++c) {
            if (mask(n, y, x, 0) == 0.0) EXPECT_EQ(once(n, y, x, c), 0.0);
            else EXPECT_EQ(once(n, y, x, c), img(n, y, x, c));
          }
  }
}

TEST(CropToBbox, TightBox) {
  Tensor mask(Shape{1, 6, 8, 1});
  mask(0, 1, 2, 0) = mask(0, 3, 5, 0) = 1.0;
  const Tensor img = random_tensor(Shape{1, 6, 8, 3}, 3);
  const Tensor crop = crop_to_mask_bbox(img, mask);
  EXPECT_EQ(crop.shape(), (Shape{1, 3, 4, 3}));
  EXPECT_EQ(crop(0, 0, 0, 1), img(0, 1, 2, 1));
  EXPECT_EQ(crop_to_mask_bbox(img, Tensor(Shape{1, 6, 8, 1})).shape(), img.shape());
}

TEST(Cascade, AllOnesMaskMatchesDirectClassification) {
  ClsModel cls(cls32());
  nn::initialize(cls.registry(), 4);
  const Tensor img = random_tensor(Shape{1, 32, 32, 3}, 5, 0, 1);
  const CascadeResult r = classify_roi(cls, img, Tensor(Shape{1, 32, 32, 1}, 1.0));
  const auto direct = predict_class(cls, img);
  EXPECT_EQ(r.probs, direct.probs);
  EXPECT_EQ(r.label, direct.label);
}

TEST(Cascade, ResultIsConsistentAndDeterministic) {
  SegModel seg(seg32());
  nn::initialize(seg.registry(), 6);
  ClsModel cls(cls32());
  nn::initialize(cls.registry(), 7);
  const Tensor img = random_tensor(Shape{1, 32, 32, 3}, 8, 0, 1);
  const CascadeResult a = cascade_infer(seg, cls, img);
  const CascadeResult b = cascade_infer(seg, cls, img);
  EXPECT_EQ(a.label, argmax_lowest(a.probs));
  EXPECT_EQ(max_abs_diff(a.mask, predict_mask(seg, img)), 0.0);
  EXPECT_EQ(max_abs_diff(a.mask, b.mask), 0.0);
  EXPECT_EQ(max_abs_diff(a.roi_image, b.roi_image), 0.0);
  EXPECT_EQ(a.probs, b.probs);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (a.mask(0, y, x, 0) == 0.0) {
        for (int c = 0; c < 3; ++c) EXPECT_EQ(a.roi_image(0, y, x, c), 0.0);
      }
}

TEST(Cascade, ResizesRoiToClassifierInput) {
  ClsModelConfig cc = cls32();
  cc.input_height = cc.input_width = 64;
  ClsModel cls(cc);
  nn::initialize(cls.registry(), 9);
  const Tensor img = random_tensor(Shape{1, 32, 32, 3}, 10, 0, 1);
  const CascadeResult r = classify_roi(cls, img, random_mask(Shape{1, 32, 32, 1}, 11));
  EXPECT_EQ(r.probs.size(), 7u);
  EXPECT_EQ(r.roi_image.shape(), (Shape{1, 32, 32, 3}));
}

TEST(BatchExtractRoi, PreservesLabelsAndIsDeterministic) {
  TempDir d("batchroi");
  SynthConfig sc;
  sc.n_samples = 9;
  sc.image_height = sc.image_width = 32;
  sc.seed = 3;
  generate_cls_dataset(sc, d / "data");
  const DatasetManifest in = load_cls_manifest(d / "data", d / "data/labels.csv");

  SegModel seg(seg32());
  nn::initialize(seg.registry(), 12);
  NormalizationPolicy p;
  p.height = p.width = 32;
  const DatasetManifest out = batch_extract_roi(seg, in, p, d / "roi1");
  batch_extract_roi(seg, in, p, d / "roi2");
  ASSERT_EQ(out.size(), in.size());
  EXPECT_EQ(out.class_counts, in.class_counts);
  for (std::size_t i = 0; i < in.size(); ++i) {
    EXPECT_EQ(out.samples[i].stem, in.samples[i].stem);
    EXPECT_EQ(out.samples[i].label, in.samples[i].label);
    EXPECT_EQ(slurp(d / ("roi1/images/" + in.samples[i].stem + ".png")),
              slurp(d / ("roi2/images/" + in.samples[i].stem + ".png")));
  }
  // The output directory is itself a loadable classification dataset.
  const DatasetManifest again = load_cls_manifest(d / "roi1", d / "roi1/labels.csv");
  EXPECT_EQ(again.class_counts, in.class_counts);

  // Ground-truth masks: ROI pixels outside the lesion are 0.
  const DatasetManifest gt = batch_extract_roi_from_masks(in, d / "data/masks", p, d / "roi_gt");
  const Tensor roi = read_rgb(d / ("roi_gt/images/" + in.samples[0].stem + ".png"));
  const Tensor mask = read_gray(d / ("data/masks/" + in.samples[0].stem + ".png"));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x)
      if (mask(0, y, x, 0) == 0.0) {
        EXPECT_EQ(roi(0, y, x, 0) + roi(0, y, x, 1) + roi(0, y, x, 2), 0.0);
      }
}

TEST(Synth, MasksMatchAnalyticDisks) {
  TempDir d("synthseg");
  SynthConfig c;
  c.n_samples = 8;
  c.seed = 4;
  const auto lesions = generate_seg_dataset(c, d.path());
  ASSERT_EQ(lesions.size(), 8u);
  for (const auto& l : lesions) {
    EXPECT_EQ(l.ry, l.rx);
    Tensor analytic(Shape{1, c.image_height, c.image_width, 1});
    for (int y = 0; y < c.image_height; ++y)
      for (int x = 0; x < c.image_width; ++x)
        analytic(0, y, x, 0) = (y - l.cy) * (y - l.cy) + (x - l.cx) * (x - l.cx) <= l.rx * l.rx ? 1.0 : 0.0;
    Tensor disk = read_gray(d / ("masks/" + l.stem + ".png"));
    for (double& v : disk.values()) v = v > 127.5 ? 1.0 : 0.0;
    EXPECT_EQ(dice_score(disk.values(), analytic.values()), 1.0) << l.stem;
    EXPECT_GT(analytic.sum(), 0.0);
  }
  EXPECT_EQ(load_seg_manifest(d.path()).size(), 8u);
}

TEST(Synth, NoiselessHistogramsAreDisjoint) {
  SynthConfig c;
  c.n_samples = 6;
  c.background_noise = 0.0;
  c.seed = 5;
  for (int i = 0; i < c.n_samples; ++i) {
    const SynthSample s = render_seg_sample(c, i);
    double lesion_max = -1, bg_min = 1e9;
    for (int y = 0; y < c.image_height; ++y)
      for (int x = 0; x < c.image_width; ++x) {
        const double lum = s.image(0, y, x, 0) + s.image(0, y, x, 1) + s.image(0, y, x, 2);
        if (s.mask(0, y, x, 0) == 1.0) lesion_max = std::max(lesion_max, lum);
        else bg_min = std::min(bg_min, lum);
      }
    EXPECT_LT(lesion_max, bg_min) << i;
  }
}

TEST(Synth, SameSeedSameFiles) {
  TempDir d("synthdet");
  SynthConfig c;
  c.n_samples = 5;
  c.distractor_strength = 0.5;
  c.seed = 6;
  generate_cls_dataset(c, d / "a");
  generate_cls_dataset(c, d / "b");
  for (const auto& e : std::filesystem::recursive_directory_iterator(d / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(e.path(), d / "a");
    EXPECT_EQ(slurp(e.path()), slurp(d / "b" / rel)) << rel;
  }
}

TEST(Synth, LabelCountsAsConfigured) {
  TempDir d("synthcounts");
  SynthConfig c;
  c.image_height = c.image_width = 16;
  c.class_counts = {3, 5, 11, 1, 11, 67, 2};
  generate_cls_dataset(c, d.path());
  std::ifstream csv(d / "labels.csv");
  std::string line;
  int rows = -1;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, c.total_samples());
  const DatasetManifest m = load_cls_manifest(d.path(), d / "labels.csv");
  for (int k = 0; k < 7; ++k)
    EXPECT_EQ(m.class_counts.at(lesion_class_name(k)), c.class_counts[static_cast<std::size_t>(k)]);
}

TEST(Synth, LesionCentroidOracleIsPerfectWithoutDistractors) {
  SynthConfig train, test;
  train.n_samples = test.n_samples = 70;
  train.seed = 7;
  test.seed = 8;
  EXPECT_EQ(centroid_accuracy(train, test, true), 1.0);
}

TEST(Synth, BackgroundCarriesNoClassSignal) {
  SynthConfig train, test;
  train.n_samples = test.n_samples = 210;
  train.image_height = train.image_width = test.image_height = test.image_width = 32;
  train.distractor_strength = test.distractor_strength = 0.8;
  train.seed = 9;
  test.seed = 10;
  // Chance is 1/7; 210 test samples put three standard deviations near 0.22.
  EXPECT_LT(centroid_accuracy(train, test, false), 0.25);
  EXPECT_EQ(centroid_accuracy(train, test, true), 1.0);
}

TEST(Synth, ConfigValidation) {
  EXPECT_THROW(nlohmann::json::parse(R"({"lesion_shape": "square"})").get<SynthConfig>(), Error);
  EXPECT_THROW(nlohmann::json::parse(R"({"colour": 1})").get<SynthConfig>(), Error);
  SynthConfig c;
  c.min_radius_fraction = 0.4;
  c.max_radius_fraction = 0.2;
  EXPECT_THROW(c.validate(), Error);
  const nlohmann::json j = SynthConfig{};
  EXPECT_EQ(nlohmann::json(j.get<SynthConfig>()), j);
}
