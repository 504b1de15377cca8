#pragma once

#include <vector>

#include "json.hpp"
#include "lesion/blocks.hpp"

namespace lesion {

struct SegModelConfig {
  BackboneSpec backbone = default_backbone("efficientnet", 16);
  std::vector<int> skip_strides{4, 8};
  std::vector<int> decoder_widths{128, 64, 48, 32};
  int input_height = 512;
  int input_width = 512;

  void validate() const;
};

void to_json(nlohmann::json& j, const SegModelConfig& c);
void from_json(const nlohmann::json& j, SegModelConfig& c);

struct SegForward {
  Tensor probs;       // (n, h, w, 1), sigmoid output
  Shape bottleneck;   // encoder output shape
};

/// Encoder-decoder segmenter. The encoder runs at output stride 16; each
/// decoder stage upsamples x2 bilinearly, optionally concatenates the encoder
/// tap at the new stride, and applies a 3x3 conv. A 1x1 conv + sigmoid head
/// produces a full-resolution probability map.
class SegModel final : public nn::Layer {
public:
  explicit SegModel(SegModelConfig config);

  SegForward run(const Tensor& x, nn::Pass pass);
  Tensor forward(const Tensor& x, nn::Pass pass) override { return run(x, pass).probs; }
  Tensor backward(const Tensor& dprobs) override;
  void collect(const std::string& prefix, nn::Registry& out) override;

  const SegModelConfig& config() const { return config_; }

private:
  struct DecoderStage {
    int stride;     // stride after upsampling
    int tap = -1;   // encoder tap index concatenated at this stage
    int up_channels;
    nn::Upsample2x up;
    nn::Sequential conv;
  };

  SegModelConfig config_;
  nn::Backbone encoder_;
  std::vector<DecoderStage> decoder_;
  nn::Conv2d head_;
  nn::Activation sigmoid_{nn::ActivationKind::Sigmoid};
};

/// Threshold a probability map: 1 where p >= threshold, else 0.
Tensor threshold_mask(const Tensor& probs, double threshold = 0.5);

/// Infer pass on an image sized to the model's configured input, thresholded.
Tensor predict_mask(SegModel& model, const Tensor& image, double threshold = 0.5);

}  // namespace lesion
