#include "lesion/segmodel.hpp"

#include <algorithm>
#include <bit>

namespace lesion {

void SegModelConfig::validate() const {
  backbone.validate();
  require(backbone.output_stride == 16, "segmentation encoder must use output_stride 16");
  const int stages = std::countr_zero(static_cast<unsigned>(backbone.output_stride));
  require(static_cast<int>(decoder_widths.size()) == stages,
          "decoder needs " + std::to_string(stages) + " widths, got " +
              std::to_string(decoder_widths.size()));
  for (int w : decoder_widths) require(w > 0, "decoder widths must be positive");
  require(input_height > 0 && input_width > 0, "input size must be positive");
  require(input_height % backbone.output_stride == 0 && input_width % backbone.output_stride == 0,
          "input size must be a multiple of the output stride");
}

void to_json(nlohmann::json& j, const SegModelConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},
                     {"skip_strides", c.skip_strides},
                     {"decoder_widths", c.decoder_widths},
                     {"input_height", c.input_height},
                     {"input_width", c.input_width}};
}

void from_json(const nlohmann::json& j, SegModelConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "backbone") c.backbone = it->get<BackboneSpec>();
    else if (k == "backbone_preset") {
      require(!j.contains("backbone"), "give either backbone or backbone_preset, not both");
      c.backbone = backbone_from_preset(*it, 16);
    }
    else if (k == "skip_strides") c.skip_strides = it->get<std::vector<int>>();
    else if (k == "decoder_widths") c.decoder_widths = it->get<std::vector<int>>();
    else if (k == "input_height") c.input_height = it->get<int>();
    else if (k == "input_width") c.input_width = it->get<int>();
    else throw Error("unknown key '" + k + "' in segmentation model config");
  }
}

SegModel::SegModel(SegModelConfig config)
    : config_(std::move(config)),
      encoder_((config_.validate(), config_.backbone)),
      head_(config_.decoder_widths.back(), 1, 1, 1, true) {
  for (int s : config_.skip_strides) {
    const auto& taps = encoder_.taps();
    const bool found = std::any_of(taps.begin(), taps.end(), [s](const nn::FeatureTap& t) { return t.stride == s; });
    require(found, "skip stride " + std::to_string(s) + " has no encoder tap");
  }

  const bool norm = config_.backbone.normalization;
  int channels = encoder_.out_channels();
  int stride = config_.backbone.output_stride;
  decoder_.reserve(config_.decoder_widths.size());
  for (std::size_t i = 0; i < config_.decoder_widths.size(); ++i) {
    stride /= 2;
    DecoderStage& st = decoder_.emplace_back();
    st.stride = stride;
    st.up_channels = channels;
    int in = channels;
    if (std::find(config_.skip_strides.begin(), config_.skip_strides.end(), stride) !=
        config_.skip_strides.end()) {
      const auto& taps = encoder_.taps();
      for (std::size_t t = 0; t < taps.size(); ++t)
        if (taps[t].stride == stride) {
          st.tap = static_cast<int>(t);
          in += taps[t].channels;
        }
    }
    const int out = config_.decoder_widths[i];
    st.conv.emplace<nn::Conv2d>("conv", in, out, 3, 1, !norm);
    if (norm) st.conv.emplace<nn::BatchNorm>("bn", out);
    st.conv.emplace<nn::Activation>("act", nn::ActivationKind::Relu);
    channels = out;
  }
}

SegForward SegModel::run(const Tensor& x, nn::Pass pass) {
  const int os = config_.backbone.output_stride;
  require(x.h() % os == 0 && x.w() % os == 0,
          "input " + x.shape().str() + " is not a multiple of output stride " + std::to_string(os));
  require(x.c() == config_.backbone.stem.in_channels, "input channel mismatch");

  nn::BackboneOutput enc = encoder_.forward(x, pass);
  SegForward out;
  out.bottleneck = enc.final.shape();
  Tensor h = std::move(enc.final);
  for (auto& st : decoder_) {
    h = st.up.forward(h, pass);
    if (st.tap >= 0) h = concat_channels(h, enc.taps[static_cast<std::size_t>(st.tap)]);
    h = st.conv.forward(h, pass);
  }
  out.probs = sigmoid_.forward(head_.forward(h, pass), pass);
  return out;
}

Tensor SegModel::backward(const Tensor& dprobs) {
  Tensor g = head_.backward(sigmoid_.backward(dprobs));
  std::vector<Tensor> d_taps(encoder_.taps().size());
  for (auto it = decoder_.rbegin(); it != decoder_.rend(); ++it) {
    g = it->conv.backward(g);
    if (it->tap >= 0) {
      Tensor d_up, d_skip;
      split_channels(g, it->up_channels, d_up, d_skip);
      d_taps[static_cast<std::size_t>(it->tap)] = std::move(d_skip);
      g = std::move(d_up);
    }
    g = it->up.backward(g);
  }
  return encoder_.backward(g, d_taps);
}

void SegModel::collect(const std::string& prefix, nn::Registry& out) {
  encoder_.collect(nn::scoped(prefix, "encoder"), out);
  for (std::size_t i = 0; i < decoder_.size(); ++i)
    decoder_[i].conv.collect(nn::scoped(prefix, "decoder" + std::to_string(i)), out);
  head_.collect(nn::scoped(prefix, "head"), out);
}

Tensor threshold_mask(const Tensor& probs, double threshold) {
  Tensor mask(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) mask[i] = probs[i] >= threshold ? 1.0 : 0.0;
  return mask;
}

Tensor predict_mask(SegModel& model, const Tensor& image, double threshold) {
  const auto& cfg = model.config();
  require(image.h() == cfg.input_height && image.w() == cfg.input_width,
          "image " + image.shape().str() + " does not match model input " +
              std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  return threshold_mask(model.forward(image, nn::Pass::Infer), threshold);
}

}  // namespace lesion
