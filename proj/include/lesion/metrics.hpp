#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "lesion/tensor.hpp"

namespace lesion {

/// 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty. Inputs must be {0,1}.
double dice_score(std::span<const double> pred, std::span<const double> truth);
/// |P∩G| / |P∪G|; 1.0 when both masks are empty.
double iou(std::span<const double> pred, std::span<const double> truth);

enum class MiouConvention {
  PerImageForeground,  // mean over images of foreground IoU
  PerImageTwoClass,    // mean over images of (IoU_fg + IoU_bg) / 2
};

using MaskPair = std::pair<Tensor, Tensor>;  // (prediction, ground truth)

double mean_iou(const std::vector<MaskPair>& pairs,
                MiouConvention convention = MiouConvention::PerImageForeground);

struct MetricsReport {
  std::string task;  // "segmentation" or "classification"
  double dice = 0.0;
  double miou = 0.0;
  double accuracy = 0.0;
  std::vector<std::vector<long long>> confusion;  // [truth][prediction]
  std::vector<std::string> class_names;
  int n_samples = 0;
  std::string config_digest;
  std::string variant;  // e.g. "with_roi", "without_roi"
};

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

/// Mean per-image Dice and mIoU over the pairs.
MetricsReport segmentation_report(const std::vector<MaskPair>& pairs,
                                  MiouConvention convention = MiouConvention::PerImageForeground);
/// Accuracy and confusion counts; throws "no samples" on empty input.
MetricsReport classification_report(std::span<const int> preds, std::span<const int> truths,
                                    int num_classes);

/// Fraction rendered as a percentage with two decimals, e.g. 0.8956 -> "89.56".
std::string percent(double fraction);
/// Human-readable table in the percentage convention.
std::string format_report(const MetricsReport& r);

}  // namespace lesion
