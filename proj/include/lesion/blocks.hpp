#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lesion/layers.hpp"

namespace lesion {

enum class BlockFamily { Plain, Residual, Dsc, DscResidual, MBConvSE };

std::string_view to_string(BlockFamily f);
BlockFamily parse_block_family(std::string_view name);

struct BlockSpec {
  BlockFamily family = BlockFamily::Plain;
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int kernel = 3;
  double expansion = 6.0;  // mbconv only
  double se_ratio = 0.25;  // mbconv only

  void validate() const;
  /// Expanded width of the MBConv inverted bottleneck.
  int expanded_channels() const;
};

struct StageSpec {
  BlockSpec block;
  int repeat = 1;
};

struct BackboneSpec {
  BlockSpec stem;
  std::vector<StageSpec> stages;
  int output_stride = 16;
  bool normalization = true;

  /// Throws lesion::Error when strides or widths are inconsistent.
  void validate() const;
};

void to_json(nlohmann::json& j, const BlockSpec& s);
void from_json(const nlohmann::json& j, BlockSpec& s);
void to_json(nlohmann::json& j, const BackboneSpec& s);
void from_json(const nlohmann::json& j, BackboneSpec& s);

/// Knobs for the desk-scale presets.
struct BackboneScale {
  int in_channels = 3;
  int stem_width = 32;
  int width_cap = 256;
  int repeat = 1;
  bool normalization = true;
};

/// Preset for one of "unet", "resnet", "mobilenet", "xception", "efficientnet".
/// Widths double at every downsampling stage, capped at `scale.width_cap`.
BackboneSpec default_backbone(std::string_view family, int output_stride,
                              const BackboneScale& scale = {});
std::vector<std::string> backbone_families();

/// {"family": ..., "stem_width", "width_cap", "repeat", "in_channels",
/// "normalization"} expanded through default_backbone.
BackboneSpec backbone_from_preset(const nlohmann::json& j, int output_stride);

/// Bias-free convolution weight count of one block, in closed form.
std::size_t conv_weight_count(const BlockSpec& spec);

namespace nn {

/// Channelwise gate: GAP -> FC reduce -> swish -> FC expand -> sigmoid -> scale.
class SqueezeExcite final : public Layer {
public:
  SqueezeExcite(int channels, double se_ratio);
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;

  static int reduced_width(int channels, double se_ratio);
  int reduced() const { return reduced_; }

private:
  int channels_;
  int reduced_;
  GlobalAvgPool pool_;
  Dense reduce_;
  Activation act_{ActivationKind::Swish};
  Dense expand_;
  Activation gate_{ActivationKind::Sigmoid};
  Tensor input_;
  Tensor scale_;
};

/// Block of any family. Output spatial size is ceil(in / stride).
class Block final : public Layer {
public:
  Block(const BlockSpec& spec, bool normalization);
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;

  const BlockSpec& spec() const { return spec_; }
  bool has_residual() const { return residual_; }
  bool has_projection() const { return !shortcut_.empty(); }

private:
  BlockSpec spec_;
  Sequential body_;
  Sequential shortcut_;  // empty: identity
  bool residual_ = false;
};

struct FeatureTap {
  int stride;
  int channels;
};

struct BackboneOutput {
  Tensor final;
  std::vector<Tensor> taps;  // aligned with Backbone::taps()
};

/// Stem + stages, exposing every intermediate stride below the output stride
/// as a skip candidate.
class Backbone {
public:
  explicit Backbone(const BackboneSpec& spec);

  BackboneOutput forward(const Tensor& x, Pass pass);
  /// `d_taps` is aligned with taps(); empty tensors contribute nothing.
  Tensor backward(const Tensor& d_final, const std::vector<Tensor>& d_taps);
  void collect(const std::string& prefix, Registry& out);

  const BackboneSpec& spec() const { return spec_; }
  const std::vector<FeatureTap>& taps() const { return taps_; }
  int out_channels() const { return out_channels_; }
  int output_stride() const { return spec_.output_stride; }

private:
  BackboneSpec spec_;
  std::vector<std::unique_ptr<Block>> blocks_;
  std::vector<int> tap_after_block_;  // tap index emitted after block i, or -1
  std::vector<FeatureTap> taps_;
  int out_channels_ = 0;
};

}  // namespace nn
}  // namespace lesion
