#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <unistd.h>
#include <string>
#include <vector>

#include "lesion/layers.hpp"
#include "lesion/seeding.hpp"
#include "lesion/tensor.hpp"

namespace testutil {

using lesion::Shape;
using lesion::Tensor;

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (double& v : t.values()) v = u(rng);
  return t;
}

inline Tensor random_mask(Shape s, std::uint64_t seed, double p = 0.5) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution b(p);
  Tensor t(s);
  for (double& v : t.values()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradReport {
  double max_rel = 0.0;
  int checked = 0;
  std::string worst;
};

/// Compares backward() against central differences of L = sum(w * f(x)) for a
/// random projection w, on a sample of input entries and of every parameter.
/// Each entry is tried at a few step sizes and the closest one is kept: with
/// thousands of ReLUs some pre-activation sits within h of zero, and a step that
/// straddles that kink is not a valid derivative estimate.
inline GradReport check_layer_gradients(lesion::nn::Layer& layer, const Tensor& x, std::uint64_t seed,
                                        int samples = 12) {
  using lesion::nn::Pass;
  const auto reg = layer.registry();
  const Tensor y0 = layer.forward(x, Pass::Train);
  const Tensor w = random_tensor(y0.shape(), seed ^ 0x9e37ULL);
  auto loss = [&](const Tensor& in) {
    const Tensor y = layer.forward(in, Pass::Train);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += w[i] * y[i];
    return s;
  };

  reg.zero_grad();
  layer.forward(x, Pass::Train);
  const Tensor dx = layer.backward(w);
  std::vector<std::vector<double>> pgrads;
  for (const auto& p : reg.params) pgrads.push_back(p.param->grad);

  GradReport r;
  std::mt19937_64 rng(seed);
  auto note = [&](double a, double n, const std::string& what) {
    const double e = rel_error(a, n);
    ++r.checked;
    if (e > r.max_rel) {
      r.max_rel = e;
      std::ostringstream os;
      os << what << " analytic=" << a << " numeric=" << n;
      r.worst = os.str();
    }
  };

  // Central differences of loss(eval) as `slot` moves: the 3-point and the
  // 5-point stencil over several steps, keeping the estimate closest to the
  // analytic value.
  auto probe = [&](double analytic, double& slot, auto eval, const std::string& what) {
    const double orig = slot;
    auto at = [&](double d) {
      slot = orig + d;
      const double v = eval();
      slot = orig;
      return v;
    };
    double best = 0.0, best_err = INFINITY;
    auto keep = [&](double n) {
      if (rel_error(analytic, n) < best_err) best_err = rel_error(analytic, n), best = n;
    };
    for (double h : {1e-2, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7}) {
      const double d1 = at(h) - at(-h);
      const double d2 = at(2 * h) - at(-2 * h);
      keep(d1 / (2 * h));
      keep((8 * d1 - d2) / (12 * h));
    }
    note(analytic, best, what);
  };

  Tensor xp = x;
  for (int s = 0; s < samples; ++s) {
    const std::size_t i = rng() % x.size();
    probe(dx[i], xp[i], [&] { return loss(xp); }, "input[" + std::to_string(i) + "]");
  }
  for (std::size_t k = 0; k < reg.params.size(); ++k) {
    auto& v = reg.params[k].param->value;
    const int n = std::min<int>(samples, static_cast<int>(v.size()));
    for (int s = 0; s < n; ++s) {
      const std::size_t i = v.size() <= static_cast<std::size_t>(samples) ? static_cast<std::size_t>(s) : rng() % v.size();
      probe(pgrads[k][i], v[i], [&] { return loss(x); }, reg.params[k].name + "[" + std::to_string(i) + "]");
    }
  }
  return r;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("lesion_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
  std::filesystem::path path_;
};

}  // namespace testutil
