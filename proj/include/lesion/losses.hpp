#pragma once

#include <map>
#include <span>
#include <string>

#include "lesion/tensor.hpp"

namespace lesion {

inline constexpr double kProbClip = 1e-7;

struct LossValue {
  double total = 0.0;
  std::map<std::string, double> components;
};

/// 1 - (2 sum(P*G) + eps) / (sum(P) + sum(G) + eps)
double dice_loss(std::span<const double> p, std::span<const double> g, double eps = 1.0);
/// Accumulates scale * d(dice_loss)/dP into dp.
void dice_loss_grad(std::span<const double> p, std::span<const double> g, double eps,
                    std::span<double> dp, double scale = 1.0);

/// Mean over pixels of -[G ln P + (1-G) ln(1-P)], P clipped to [1e-7, 1-1e-7].
double binary_cross_entropy(std::span<const double> p, std::span<const double> g);
void binary_cross_entropy_grad(std::span<const double> p, std::span<const double> g,
                               std::span<double> dp, double scale = 1.0);

/// binary_cross_entropy + dice_loss, components kept under "bce" and "dice".
LossValue seg_loss(std::span<const double> p, std::span<const double> g, double eps = 1.0);

/// -ln probs[label], probability clipped before the log.
double categorical_cross_entropy(std::span<const double> probs, int label, int num_classes);
void categorical_cross_entropy_grad(std::span<const double> probs, int label,
                                    std::span<double> dprobs, double scale = 1.0);

struct BatchLoss {
  LossValue value;    // mean over the batch
  Tensor grad;        // d(value.total)/d(probs)
  std::vector<double> per_sample;
};

/// Per-image seg_loss averaged over the batch. probs and masks are (n,h,w,1).
BatchLoss seg_batch_loss(const Tensor& probs, const Tensor& masks, double eps = 1.0);
/// Per-sample categorical cross-entropy averaged over the batch. probs is (n,1,1,k).
BatchLoss cls_batch_loss(const Tensor& probs, std::span<const int> labels);

}  // namespace lesion
