#include "lesion/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "lesion/seeding.hpp"

namespace lesion {

AugmentConfig AugmentConfig::identity() {
  AugmentConfig c;
  c.rotation_degrees = {0.0, 0.0};
  c.shear_degrees = {0.0, 0.0};
  c.zoom_factor = {1.0, 1.0};
  c.brightness_delta = {0.0, 0.0};
  c.horizontal_flip = 0.0;
  c.vertical_flip = 0.0;
  return c;
}

void AugmentConfig::validate() const {
  for (const Interval* r : {&rotation_degrees, &shear_degrees, &zoom_factor, &brightness_delta})
    require(r->lo <= r->hi, "augment range has lo > hi");
  require(zoom_factor.lo > 0.0, "zoom range must exclude 0");
  require(std::abs(shear_degrees.lo) < 90.0 && std::abs(shear_degrees.hi) < 90.0,
          "shear must lie in (-90, 90) degrees");
  require(horizontal_flip >= 0.0 && horizontal_flip <= 1.0 && vertical_flip >= 0.0 &&
              vertical_flip <= 1.0,
          "flip probabilities must lie in [0, 1]");
  require(value_lower < value_upper, "augment value range is empty");
}

namespace {

nlohmann::json range_json(const Interval& r) { return nlohmann::json::array({r.lo, r.hi}); }

Interval parse_range(const nlohmann::json& j, const std::string& key) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == 2, "augment." + key + " must be [lo, hi]");
  return {v[0], v[1]};
}

double uniform(std::mt19937_64& rng, const Interval& r) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return r.lo + (r.hi - r.lo) * u;
}

bool coin(std::mt19937_64& rng, double p) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return u < p;
}

int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace

void to_json(nlohmann::json& j, const AugmentConfig& c) {
  j = nlohmann::json{{"rotation_degrees", range_json(c.rotation_degrees)},
                     {"shear_degrees", range_json(c.shear_degrees)},
                     {"zoom_factor", range_json(c.zoom_factor)},
                     {"brightness_delta", range_json(c.brightness_delta)},
                     {"horizontal_flip", c.horizontal_flip},
                     {"vertical_flip", c.vertical_flip},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, AugmentConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "rotation_degrees") c.rotation_degrees = parse_range(*it, k);
    else if (k == "shear_degrees") c.shear_degrees = parse_range(*it, k);
    else if (k == "zoom_factor") c.zoom_factor = parse_range(*it, k);
    else if (k == "brightness_delta") c.brightness_delta = parse_range(*it, k);
    else if (k == "horizontal_flip") c.horizontal_flip = it->get<double>();
    else if (k == "vertical_flip") c.vertical_flip = it->get<double>();
    else if (k == "seed") c.seed = it->get<std::uint64_t>();
    else throw Error("unknown key '" + k + "' in augment config");
  }
  c.validate();
}

std::uint64_t augment_sample_seed(std::uint64_t global_seed, std::uint64_t epoch, std::uint64_t index) {
  return derive_seed({global_seed, epoch, index});
}

AugmentParams draw_augment_params(const AugmentConfig& config, std::uint64_t sample_seed) {
  std::mt19937_64 rng(sample_seed);
  AugmentParams p;
  p.rotation_degrees = uniform(rng, config.rotation_degrees);
  p.shear_degrees = uniform(rng, config.shear_degrees);
  p.zoom = uniform(rng, config.zoom_factor);
  p.brightness = uniform(rng, config.brightness_delta);
  p.horizontal_flip = coin(rng, config.horizontal_flip);
  p.vertical_flip = coin(rng, config.vertical_flip);
  return p;
}

Tensor apply_geometry(const Tensor& image, const AugmentParams& params, bool is_mask) {
  const int N = image.n(), H = image.h(), W = image.w(), C = image.c();
  Tensor out = image;

  const bool affine = params.rotation_degrees != 0.0 || params.shear_degrees != 0.0 || params.zoom != 1.0;
  if (affine) {
    const double deg = std::numbers::pi / 180.0;
    const double ct = std::cos(params.rotation_degrees * deg), st = std::sin(params.rotation_degrees * deg);
    const double sh = std::tan(params.shear_degrees * deg), z = params.zoom;
    // Forward map (dst - centre) = R * Shear * Zoom * (src - centre), in (x, y) with y down.
    const double a = ct * z, b = (ct * sh + st) * z;
    const double c = -st * z, d = (-st * sh + ct) * z;
    const double det = a * d - b * c;
    const double ia = d / det, ib = -b / det, ic = -c / det, id = a / det;
    const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;

#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double dx = x - cx, dy = y - cy;
          const double sx = ia * dx + ib * dy + cx, sy = ic * dx + id * dy + cy;
          const double fx0 = std::floor(sx), fy0 = std::floor(sy);
          const double fx = sx - fx0, fy = sy - fy0;
          const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
          const int rx0 = reflect(x0, W), rx1 = reflect(x0 + 1, W);
          const int ry0 = reflect(y0, H), ry1 = reflect(y0 + 1, H);
          for (int ch = 0; ch < C; ++ch) {
            const double top = image(n, ry0, rx0, ch) * (1 - fx) + image(n, ry0, rx1, ch) * fx;
            const double bot = image(n, ry1, rx0, ch) * (1 - fx) + image(n, ry1, rx1, ch) * fx;
            double v = top * (1 - fy) + bot * fy;
            if (is_mask) v = v >= 0.5 ? 1.0 : 0.0;
            out(n, y, x, ch) = v;
          }
        }
  }

  if (params.horizontal_flip || params.vertical_flip) {
    const Tensor src = out;
    for (int n = 0; n < N; ++n)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int sy = params.vertical_flip ? H - 1 - y : y;
          const int sx = params.horizontal_flip ? W - 1 - x : x;
          for (int ch = 0; ch < C; ++ch) out(n, y, x, ch) = src(n, sy, sx, ch);
        }
  }
  return out;
}

namespace {

Tensor apply_brightness(Tensor image, const AugmentConfig& config, double delta) {
  if (delta == 0.0) return image;
  for (double& v : image.values()) v = std::clamp(v + delta, config.value_lower, config.value_upper);
  return image;
}

}  // namespace

std::pair<Tensor, Tensor> augment_pair(const Tensor& image, const Tensor& mask,
                                       const AugmentConfig& config, std::uint64_t sample_seed) {
  require(image.n() == mask.n() && image.h() == mask.h() && image.w() == mask.w(),
          "image " + image.shape().str() + " and mask " + mask.shape().str() + " are not aligned");
  const AugmentParams p = draw_augment_params(config, sample_seed);
  Tensor img = apply_brightness(apply_geometry(image, p, false), config, p.brightness);
  Tensor msk = apply_geometry(mask, p, true);
  return {std::move(img), std::move(msk)};
}

Tensor augment_image(const Tensor& image, const AugmentConfig& config, std::uint64_t sample_seed) {
  const AugmentParams p = draw_augment_params(config, sample_seed);
  return apply_brightness(apply_geometry(image, p, false), config, p.brightness);
}

}  // namespace lesion
