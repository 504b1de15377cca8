#include "lesion/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lesion {
namespace {

void check_pair(std::span<const double> p, std::span<const double> g) {
  require(p.size() == g.size(), "loss shape mismatch: " + std::to_string(p.size()) + " vs " +
                                    std::to_string(g.size()));
  require(!p.empty(), "loss of empty input");
}

double clip(double v) { return std::clamp(v, kProbClip, 1.0 - kProbClip); }
bool clipped(double v) { return v < kProbClip || v > 1.0 - kProbClip; }

}  // namespace

double dice_loss(std::span<const double> p, std::span<const double> g, double eps) {
  check_pair(p, g);
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    total += p[i] + g[i];
  }
  const double denom = total + eps;
  if (denom == 0.0) return 0.0;  // eps = 0 and both empty
  return 1.0 - (2.0 * inter + eps) / denom;
}

void dice_loss_grad(std::span<const double> p, std::span<const double> g, double eps,
                    std::span<double> dp, double scale) {
  check_pair(p, g);
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    inter += p[i] * g[i];
    total += p[i] + g[i];
  }
  const double denom = total + eps;
  if (denom == 0.0) return;
  const double num = 2.0 * inter + eps;
  for (std::size_t i = 0; i < p.size(); ++i)
    dp[i] += scale * -(2.0 * g[i] * denom - num) / (denom * denom);
}

double binary_cross_entropy(std::span<const double> p, std::span<const double> g) {
  check_pair(p, g);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = clip(p[i]);
    acc -= g[i] * std::log(q) + (1.0 - g[i]) * std::log(1.0 - q);
  }
  return acc / static_cast<double>(p.size());
}

void binary_cross_entropy_grad(std::span<const double> p, std::span<const double> g,
                               std::span<double> dp, double scale) {
  check_pair(p, g);
  const double inv_n = 1.0 / static_cast<double>(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (clipped(p[i])) continue;
    dp[i] += scale * inv_n * (-g[i] / p[i] + (1.0 - g[i]) / (1.0 - p[i]));
  }
}

LossValue seg_loss(std::span<const double> p, std::span<const double> g, double eps) {
  LossValue v;
  v.components["bce"] = binary_cross_entropy(p, g);
  v.components["dice"] = dice_loss(p, g, eps);
  v.total = v.components["bce"] + v.components["dice"];
  return v;
}

double categorical_cross_entropy(std::span<const double> probs, int label, int num_classes) {
  require(static_cast<int>(probs.size()) == num_classes,
          "probability vector has length " + std::to_string(probs.size()) + ", expected " +
              std::to_string(num_classes));
  require(label >= 0 && label < num_classes, "label out of range");
  return -std::log(clip(probs[static_cast<std::size_t>(label)]));
}

void categorical_cross_entropy_grad(std::span<const double> probs, int label,
                                    std::span<double> dprobs, double scale) {
  const double q = probs[static_cast<std::size_t>(label)];
  if (!clipped(q)) dprobs[static_cast<std::size_t>(label)] += scale * (-1.0 / q);
}

BatchLoss seg_batch_loss(const Tensor& probs, const Tensor& masks, double eps) {
  require(probs.shape() == masks.shape(),
          "prediction " + probs.shape().str() + " vs mask " + masks.shape().str());
  BatchLoss out;
  out.grad = Tensor(probs.shape());
  const int n = probs.n();
  const std::size_t per = probs.size() / static_cast<std::size_t>(n);
  const double scale = 1.0 / n;
  for (int i = 0; i < n; ++i) {
    const auto p = probs.values().subspan(i * per, per);
    const auto g = masks.values().subspan(i * per, per);
    const LossValue v = seg_loss(p, g, eps);
    out.per_sample.push_back(v.total);
    out.value.total += scale * v.total;
    for (const auto& [k, val] : v.components) out.value.components[k] += scale * val;
    auto dp = out.grad.values().subspan(i * per, per);
    binary_cross_entropy_grad(p, g, dp, scale);
    dice_loss_grad(p, g, eps, dp, scale);
  }
  return out;
}

BatchLoss cls_batch_loss(const Tensor& probs, std::span<const int> labels) {
  require(static_cast<int>(labels.size()) == probs.n(), "label count does not match batch");
  BatchLoss out;
  out.grad = Tensor(probs.shape());
  const int k = probs.c();
  const double scale = 1.0 / probs.n();
  for (int i = 0; i < probs.n(); ++i) {
    const auto p = probs.values().subspan(static_cast<std::size_t>(i) * k, k);
    const double l = categorical_cross_entropy(p, labels[i], k);
    out.per_sample.push_back(l);
    out.value.total += scale * l;
    categorical_cross_entropy_grad(p, labels[i], out.grad.values().subspan(static_cast<std::size_t>(i) * k, k), scale);
  }
  out.value.components["cce"] = out.value.total;
  return out;
}

}  // namespace lesion
