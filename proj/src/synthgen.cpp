#include "lesion/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <optional>
#include <random>

#include "lesion/classes.hpp"
#include "lesion/image_io.hpp"
#include "lesion/seeding.hpp"

namespace lesion {
namespace {

constexpr std::uint64_t kGeometryTag = 1, kNoiseTag = 2, kClutterTag = 3, kTextureTag = 4;

constexpr std::array<double, 3> kSkin{225.0, 190.0, 165.0};
constexpr std::array<double, 3> kSegPigment{115.0, 75.0, 55.0};
constexpr std::array<double, 3> kHair{55.0, 40.0, 30.0};

// Spread over hue and lightness so mean lesion colour separates the classes.
constexpr std::array<std::array<double, 3>, kNumLesionClasses> kPigments{{
    {200.0, 70.0, 70.0},    // red
    {230.0, 150.0, 205.0},  // pink
    {150.0, 110.0, 40.0},   // ochre
    {100.0, 70.0, 160.0},   // violet
    {35.0, 30.0, 30.0},     // near black
    {90.0, 150.0, 90.0},    // green
    {60.0, 120.0, 200.0},   // blue
}};

class Rng {
public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Box-Muller; avoids implementation-defined std::normal_distribution.
  double normal() {
    if (spare_) {
      const double v = *spare_;
      spare_.reset();
      return v;
    }
    const double u1 = 1.0 - uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1)), t = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(t);
    return r * std::cos(t);
  }
  int below(int n) { return static_cast<int>(uniform() * n); }

private:
  std::mt19937_64 gen_;
  std::optional<double> spare_;
};

std::string stem_for(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "synth_%05d", index);
  return buf;
}

SynthLesion draw_lesion(const SynthConfig& c, Rng& rng, double scale = 1.0) {
  SynthLesion l;
  const double side = std::min(c.image_height, c.image_width);
  const double r = rng.uniform(c.min_radius_fraction, c.max_radius_fraction) * side * scale;
  l.rx = r;
  l.ry = c.lesion_shape == LesionShape::Disk ? r : r * rng.uniform(0.6, 1.0);
  l.angle = c.lesion_shape == LesionShape::Disk ? 0.0 : rng.uniform(0.0, std::numbers::pi);
  const double R = std::max(l.rx, l.ry);
  l.cy = rng.uniform(R, c.image_height - 1 - R);
  l.cx = rng.uniform(R, c.image_width - 1 - R);
  return l;
}

// Normalized radial coordinate: < 1 inside the lesion.
double lesion_radius(const SynthLesion& l, double y, double x) {
  const double dy = y - l.cy, dx = x - l.cx;
  const double ca = std::cos(l.angle), sa = std::sin(l.angle);
  const double u = (dx * ca + dy * sa) / l.rx, v = (-dx * sa + dy * ca) / l.ry;
  return std::sqrt(u * u + v * v);
}

Tensor background(const SynthConfig& c, Rng& rng) {
  Tensor img(Shape{1, c.image_height, c.image_width, 3});
  std::array<double, 3> tint{};
  for (double& t : tint) t = rng.uniform(-8.0, 8.0);
  for (int y = 0; y < c.image_height; ++y)
    for (int x = 0; x < c.image_width; ++x)
      for (int ch = 0; ch < 3; ++ch) img(0, y, x, ch) = kSkin[ch] + tint[ch];
  return img;
}

void blend(Tensor& img, int y, int x, const std::array<double, 3>& rgb, double alpha) {
  for (int ch = 0; ch < 3; ++ch) img(0, y, x, ch) = (1.0 - alpha) * img(0, y, x, ch) + alpha * rgb[ch];
}

// Class texture: pigment plus stripes whose frequency encodes the class.
void paint_textured(Tensor& img, const SynthLesion& l, int k, double stripe_angle, double alpha) {
  const double freq = 1.0 + 0.75 * k;  // cycles across the lesion diameter
  const double ca = std::cos(stripe_angle), sa = std::sin(stripe_angle);
  const double span = 2.0 * std::max(l.rx, l.ry);
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x) {
      if (!inside_lesion(l, y, x)) continue;
      const double u = ((x - l.cx) * ca + (y - l.cy) * sa) / span;
      const double s = 22.0 * std::sin(2.0 * std::numbers::pi * freq * u);
      const auto& p = kPigments[static_cast<std::size_t>(k)];
      blend(img, y, x, {p[0] + s, p[1] + s, p[2] + s}, alpha);
    }
}

void add_clutter(Tensor& img, const SynthConfig& c, Rng& rng) {
  const double s = c.distractor_strength;
  if (s <= 0.0) return;
  const double cy = (c.image_height - 1) / 2.0, cx = (c.image_width - 1) / 2.0;
  const double dmax2 = cy * cy + cx * cx;
  for (int y = 0; y < img.h(); ++y)
    for (int x = 0; x < img.w(); ++x) {
      const double f = 1.0 - 0.35 * s * ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / dmax2;
      for (int ch = 0; ch < 3; ++ch) img(0, y, x, ch) *= f;
    }
  const int hairs = static_cast<int>(std::lround(6.0 * s));
  for (int h = 0; h < hairs; ++h) {
    double y = rng.uniform(0.0, c.image_height - 1.0), x = rng.uniform(0.0, c.image_width - 1.0);
    const double a = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const int len = static_cast<int>(rng.uniform(0.3, 0.8) * std::max(c.image_height, c.image_width));
    for (int t = 0; t < len; ++t) {
      const int iy = static_cast<int>(std::lround(y)), ix = static_cast<int>(std::lround(x));
      if (iy >= 0 && iy < c.image_height && ix >= 0 && ix < c.image_width) blend(img, iy, ix, kHair, std::min(1.0, s));
      y += std::sin(a);
      x += std::cos(a);
    }
  }
}

void add_noise(Tensor& img, double sd, Rng& rng) {
  if (sd <= 0.0) return;
  for (double& v : img.values()) v += 255.0 * sd * rng.normal();
}

void clamp8(Tensor& img) {
  for (double& v : img.values()) v = std::clamp(v, 0.0, 255.0);
}

bool overlaps(const SynthLesion& a, const SynthLesion& b) {
  const double d = std::hypot(a.cy - b.cy, a.cx - b.cx);
  return d < std::max(a.rx, a.ry) + std::max(b.rx, b.ry) + 1.0;
}

void write_sidecar(const SynthConfig& c, const std::string& kind, const std::vector<SynthLesion>& lesions,
                   const std::filesystem::path& root) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& l : lesions)
    list.push_back({{"stem", l.stem}, {"label", l.label}, {"cy", l.cy}, {"cx", l.cx},
                    {"ry", l.ry}, {"rx", l.rx}, {"angle", l.angle}});
  nlohmann::json j{{"kind", kind}, {"config", c}, {"lesions", list}};
  std::ofstream out(root / "synth.json");
  out << j.dump(2) << '\n';
  if (!out) throw Error("cannot write '" + (root / "synth.json").string() + "'");
}

template <typename Render>
std::vector<SynthLesion> generate(const SynthConfig& c, const std::filesystem::path& root, Render render) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  const int N = c.total_samples();
  std::vector<SynthLesion> lesions(static_cast<std::size_t>(N));
  std::vector<std::optional<std::string>> errors(static_cast<std::size_t>(N));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < N; ++i) {
    try {
      SynthSample s = render(i);
      write_png(root / "images" / (s.lesion.stem + ".png"), s.image);
      for (double& v : s.mask.values()) v *= 255.0;
      write_png(root / "masks" / (s.lesion.stem + ".png"), s.mask);
      lesions[static_cast<std::size_t>(i)] = s.lesion;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (e) throw Error("synthetic generation failed: " + *e);
  return lesions;
}

}  // namespace

void SynthConfig::validate() const {
  require(image_height >= 8 && image_width >= 8, "synthetic images must be at least 8x8");
  require(texture_classes >= 1 && texture_classes <= kNumLesionClasses, "texture_classes must lie in [1, 7]");
  require(background_noise >= 0.0, "background_noise must be >= 0");
  require(distractor_strength >= 0.0 && distractor_strength <= 1.0, "distractor_strength must lie in [0, 1]");
  require(min_radius_fraction > 0.0 && min_radius_fraction <= max_radius_fraction && max_radius_fraction <= 0.45,
          "radius fractions must satisfy 0 < min <= max <= 0.45");
  if (class_counts.empty()) {
    require(n_samples >= 1, "n_samples must be >= 1");
  } else {
    require(static_cast<int>(class_counts.size()) == texture_classes, "class_counts needs one entry per class");
    for (long long v : class_counts) require(v >= 0, "class_counts must be >= 0");
    require(total_samples() >= 1, "class_counts sum to zero");
  }
}

int SynthConfig::total_samples() const {
  if (class_counts.empty()) return n_samples;
  long long total = 0;
  for (long long v : class_counts) total += v;
  return static_cast<int>(total);
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = nlohmann::json{{"n_samples", c.n_samples},
                     {"image_size", {c.image_height, c.image_width}},
                     {"lesion_shape", c.lesion_shape == LesionShape::Disk ? "disk" : "ellipse"},
                     {"texture_classes", c.texture_classes},
                     {"background_noise", c.background_noise},
                     {"distractor_strength", c.distractor_strength},
                     {"seed", c.seed},
                     {"radius_fraction", {c.min_radius_fraction, c.max_radius_fraction}}};
  if (!c.class_counts.empty()) j["class_counts"] = c.class_counts;
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "n_samples") c.n_samples = it->get<int>();
    else if (k == "image_size") {
      const auto v = it->get<std::vector<int>>();
      require(v.size() == 2, "image_size must be [h, w]");
      c.image_height = v[0], c.image_width = v[1];
    } else if (k == "lesion_shape") {
      const auto s = it->get<std::string>();
      if (s == "disk") c.lesion_shape = LesionShape::Disk;
      else if (s == "ellipse") c.lesion_shape = LesionShape::Ellipse;
      else throw Error("unknown lesion_shape '" + s + "'");
    } else if (k == "texture_classes") c.texture_classes = it->get<int>();
    else if (k == "background_noise") c.background_noise = it->get<double>();
    else if (k == "distractor_strength") c.distractor_strength = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else if (k == "class_counts") c.class_counts = it->get<std::vector<long long>>();
    else if (k == "radius_fraction") {
      const auto v = it->get<std::vector<double>>();
      require(v.size() == 2, "radius_fraction must be [min, max]");
      c.min_radius_fraction = v[0], c.max_radius_fraction = v[1];
    } else throw Error("unknown key '" + k + "' in synth config");
  }
  c.validate();
}

bool inside_lesion(const SynthLesion& l, int y, int x) { return lesion_radius(l, y, x) <= 1.0; }

Tensor rasterize_lesion(const SynthLesion& l, int height, int width) {
  Tensor m(Shape{1, height, width, 1});
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) m(0, y, x, 0) = inside_lesion(l, y, x) ? 1.0 : 0.0;
  return m;
}

std::array<double, 3> class_pigment(int k) {
  require(k >= 0 && k < kNumLesionClasses, "class index out of range");
  return kPigments[static_cast<std::size_t>(k)];
}

std::vector<int> synth_labels(const SynthConfig& c) {
  std::vector<int> labels;
  if (c.class_counts.empty()) {
    for (int i = 0; i < c.n_samples; ++i) labels.push_back(i % c.texture_classes);
  } else {
    for (std::size_t k = 0; k < c.class_counts.size(); ++k)
      labels.insert(labels.end(), static_cast<std::size_t>(c.class_counts[k]), static_cast<int>(k));
  }
  return labels;
}

SynthSample render_seg_sample(const SynthConfig& c, int index) {
  const auto i = static_cast<std::uint64_t>(index);
  Rng geo(derive_seed({c.seed, i, kGeometryTag}));
  Rng noise(derive_seed({c.seed, i, kNoiseTag}));
  Rng clutter(derive_seed({c.seed, i, kClutterTag}));

  SynthSample s;
  s.lesion = draw_lesion(c, geo);
  s.lesion.stem = stem_for(index);
  s.image = background(c, geo);
  std::array<double, 3> pigment = kSegPigment;
  for (double& p : pigment) p += geo.uniform(-15.0, 15.0);
  for (int y = 0; y < c.image_height; ++y)
    for (int x = 0; x < c.image_width; ++x) {
      const double r = lesion_radius(s.lesion, y, x);
      if (r > 1.0) continue;
      const double shade = 0.8 + 0.2 * r;
      blend(s.image, y, x, {pigment[0] * shade, pigment[1] * shade, pigment[2] * shade}, 1.0);
    }
  add_clutter(s.image, c, clutter);
  add_noise(s.image, c.background_noise, noise);
  clamp8(s.image);
  s.mask = rasterize_lesion(s.lesion, c.image_height, c.image_width);
  return s;
}

SynthSample render_cls_sample(const SynthConfig& c, int index, int label) {
  require(label >= 0 && label < c.texture_classes, "label out of range");
  const auto i = static_cast<std::uint64_t>(index);
  Rng geo(derive_seed({c.seed, i, kGeometryTag}));
  Rng noise(derive_seed({c.seed, i, kNoiseTag}));
  Rng clutter(derive_seed({c.seed, i, kClutterTag}));
  Rng texture(derive_seed({c.seed, i, kTextureTag}));

  SynthSample s;
  s.lesion = draw_lesion(c, geo);
  s.lesion.stem = stem_for(index);
  s.lesion.label = label;
  s.image = background(c, geo);

  // Lesion-like decoy of a random class; its stream never sees the label.
  if (c.distractor_strength > 0.0) {
    for (int attempt = 0; attempt < 32; ++attempt) {
      SynthLesion decoy = draw_lesion(c, clutter, 0.8);
      if (overlaps(decoy, s.lesion)) continue;
      paint_textured(s.image, decoy, clutter.below(c.texture_classes), clutter.uniform(0.0, std::numbers::pi),
                     c.distractor_strength);
      break;
    }
  }
  paint_textured(s.image, s.lesion, label, texture.uniform(0.0, std::numbers::pi), 1.0);
  add_clutter(s.image, c, clutter);
  add_noise(s.image, c.background_noise, noise);
  clamp8(s.image);
  s.mask = rasterize_lesion(s.lesion, c.image_height, c.image_width);
  return s;
}

std::vector<SynthLesion> generate_seg_dataset(const SynthConfig& c, const std::filesystem::path& root) {
  c.validate();
  auto lesions = generate(c, root, [&](int i) { return render_seg_sample(c, i); });
  write_sidecar(c, "segmentation", lesions, root);
  return lesions;
}

std::vector<SynthLesion> generate_cls_dataset(const SynthConfig& c, const std::filesystem::path& root) {
  c.validate();
  const std::vector<int> labels = synth_labels(c);
  auto lesions = generate(c, root, [&](int i) { return render_cls_sample(c, i, labels[static_cast<std::size_t>(i)]); });
  std::ofstream csv(root / "labels.csv");
  csv << "image_id,class\n";
  for (const auto& l : lesions) csv << l.stem << ',' << lesion_class_name(l.label) << '\n';
  if (!csv) throw Error("cannot write '" + (root / "labels.csv").string() + "'");
  write_sidecar(c, "classification", lesions, root);
  return lesions;
}

}  // namespace lesion
