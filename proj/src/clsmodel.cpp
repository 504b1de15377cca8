#include "lesion/clsmodel.hpp"

#include <algorithm>
#include <cmath>

namespace lesion {

int parse_lesion_class(std::string_view name) {
  for (int i = 0; i < kNumLesionClasses; ++i)
    if (kLesionClassNames[static_cast<std::size_t>(i)] == name) return i;
  throw Error("unknown class '" + std::string(name) + "'");
}

std::string lesion_class_name(int index) {
  require(index >= 0 && index < kNumLesionClasses, "class index out of range");
  return std::string(kLesionClassNames[static_cast<std::size_t>(index)]);
}

void ClsModelConfig::validate() const {
  backbone.validate();
  require(backbone.output_stride == 32, "classification backbone must use output_stride 32");
  require(num_classes >= 2, "num_classes must be >= 2");
  require(input_height % 32 == 0 && input_width % 32 == 0 && input_height > 0 && input_width > 0,
          "classifier input size must be a positive multiple of 32");
  require(head_width >= 0, "head_width must be >= 0");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const ClsModelConfig& c) {
  j = nlohmann::json{{"backbone", c.backbone},         {"num_classes", c.num_classes},
                     {"input_height", c.input_height}, {"input_width", c.input_width},
                     {"head_width", c.head_width},     {"dropout", c.dropout},
                     {"dropout_seed", c.dropout_seed}};
}

void from_json(const nlohmann::json& j, ClsModelConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "backbone") c.backbone = it->get<BackboneSpec>();
    else if (k == "backbone_preset") {
      require(!j.contains("backbone"), "give either backbone or backbone_preset, not both");
      c.backbone = backbone_from_preset(*it, 32);
    }
    else if (k == "num_classes") c.num_classes = it->get<int>();
    else if (k == "input_height") c.input_height = it->get<int>();
    else if (k == "input_width") c.input_width = it->get<int>();
    else if (k == "head_width") c.head_width = it->get<int>();
    else if (k == "dropout") c.dropout = it->get<double>();
    else if (k == "dropout_seed") c.dropout_seed = it->get<std::uint64_t>();
    else throw Error("unknown key '" + k + "' in classification model config");
  }
}

ClsModel::ClsModel(ClsModelConfig config)
    : config_(std::move(config)), backbone_((config_.validate(), config_.backbone)) {
  int width = backbone_.out_channels();
  head_.emplace<nn::GlobalAvgPool>("gap");
  if (config_.dropout > 0.0) head_.emplace<nn::Dropout>("dropout", config_.dropout, config_.dropout_seed);
  if (config_.head_width > 0) {
    head_.emplace<nn::Dense>("hidden", width, config_.head_width, std::sqrt(2.0 / width));
    head_.emplace<nn::Activation>("hidden_act", nn::ActivationKind::Relu);
    width = config_.head_width;
  }
  head_.emplace<nn::Dense>("fc", width, config_.num_classes, std::sqrt(1.0 / width));
}

Tensor ClsModel::forward(const Tensor& x, nn::Pass pass) {
  require(x.h() % 32 == 0 && x.w() % 32 == 0,
          "classifier input " + x.shape().str() + " is not a multiple of 32");
  Tensor probs = softmax(head_.forward(backbone_.forward(x, pass).final, pass));
  if (pass == nn::Pass::Train) probs_ = probs;
  return probs;
}

Tensor ClsModel::backward(const Tensor& dprobs) {
  // Softmax Jacobian-vector product: dz = p * (dp - <dp, p>).
  const int k = config_.num_classes;
  Tensor dlogits(dprobs.shape());
  for (int n = 0; n < dprobs.n(); ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * k;
    double dot = 0.0;
    for (int i = 0; i < k; ++i) dot += dprobs[base + i] * probs_[base + i];
    for (int i = 0; i < k; ++i) dlogits[base + i] = probs_[base + i] * (dprobs[base + i] - dot);
  }
  return backbone_.backward(head_.backward(dlogits), {});
}

void ClsModel::collect(const std::string& prefix, nn::Registry& out) {
  backbone_.collect(nn::scoped(prefix, "backbone"), out);
  head_.collect(nn::scoped(prefix, "head"), out);
}

Tensor ClsModel::features(const Tensor& x) { return backbone_.forward(x, nn::Pass::Infer).final; }

Tensor ClsModel::head_logits(const Tensor& feature_map) {
  return head_.forward(feature_map, nn::Pass::Infer);
}

Tensor softmax(const Tensor& logits) {
  Tensor p(logits.shape());
  const int k = logits.c();
  const std::size_t rows = logits.size() / static_cast<std::size_t>(k);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * k;
    double* out = p.data() + r * k;
    const double zmax = *std::max_element(z, z + k);
    double total = 0.0;
    for (int i = 0; i < k; ++i) {
      out[i] = std::exp(z[i] - zmax);
      total += out[i];
    }
    for (int i = 0; i < k; ++i) out[i] /= total;
  }
  return p;
}

int argmax_lowest(std::span<const double> values) {
  require(!values.empty(), "argmax of empty vector");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

ClassPrediction predict_class(ClsModel& model, const Tensor& image) {
  const auto& cfg = model.config();
  require(image.n() == 1, "predict_class expects a single image");
  require(image.h() == cfg.input_height && image.w() == cfg.input_width,
          "image " + image.shape().str() + " does not match classifier input " +
              std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  const Tensor probs = model.forward(image, nn::Pass::Infer);
  ClassPrediction out;
  out.probs.assign(probs.values().begin(), probs.values().end());
  out.label = argmax_lowest(out.probs);
  return out;
}

}  // namespace lesion
