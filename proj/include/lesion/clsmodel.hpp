#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "lesion/blocks.hpp"
#include "lesion/classes.hpp"

namespace lesion {

struct ClsModelConfig {
  BackboneSpec backbone = default_backbone("efficientnet", 32);
  int num_classes = kNumLesionClasses;
  int input_height = 224;
  int input_width = 224;
  int head_width = 0;  // hidden FC width; 0 = single FC head
  double dropout = 0.0;
  std::uint64_t dropout_seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const ClsModelConfig& c);
void from_json(const nlohmann::json& j, ClsModelConfig& c);

/// Backbone at output stride 32 -> GAP -> FC head -> softmax.
class ClsModel final : public nn::Layer {
public:
  explicit ClsModel(ClsModelConfig config);

  /// Returns class probabilities shaped (n, 1, 1, num_classes).
  Tensor forward(const Tensor& x, nn::Pass pass) override;
  Tensor backward(const Tensor& dprobs) override;
  void collect(const std::string& prefix, nn::Registry& out) override;

  /// Final backbone feature map (Infer pass).
  Tensor features(const Tensor& x);
  /// Logits from a final feature map (Infer pass).
  Tensor head_logits(const Tensor& feature_map);

  const ClsModelConfig& config() const { return config_; }

private:
  ClsModelConfig config_;
  nn::Backbone backbone_;
  nn::Sequential head_;
  Tensor probs_;
};

/// Row-wise softmax over the channel axis of an (n,1,1,k) tensor.
Tensor softmax(const Tensor& logits);

/// Index of the largest entry; ties go to the lowest index.
int argmax_lowest(std::span<const double> values);

struct ClassPrediction {
  int label = 0;
  std::vector<double> probs;
};

ClassPrediction predict_class(ClsModel& model, const Tensor& image);

}  // namespace lesion
