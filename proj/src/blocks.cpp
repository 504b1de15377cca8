#include "lesion/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

namespace lesion {

std::string_view to_string(BlockFamily f) {
  switch (f) {
    case BlockFamily::Plain: return "plain";
    case BlockFamily::Residual: return "residual";
    case BlockFamily::Dsc: return "dsc";
    case BlockFamily::DscResidual: return "dsc_residual";
    case BlockFamily::MBConvSE: return "mbconv_se";
  }
  return "?";
}

BlockFamily parse_block_family(std::string_view name) {
  for (auto f : {BlockFamily::Plain, BlockFamily::Residual, BlockFamily::Dsc,
                 BlockFamily::DscResidual, BlockFamily::MBConvSE})
    if (to_string(f) == name) return f;
  throw Error("unknown block family '" + std::string(name) + "'");
}

void BlockSpec::validate() const {
  require(in_channels > 0 && out_channels > 0, "block channels must be positive");
  require(stride == 1 || stride == 2, "block stride must be 1 or 2");
  require(kernel >= 1 && kernel % 2 == 1, "block kernel must be a positive odd number");
  require(expansion >= 1.0, "mbconv expansion must be >= 1");
  require(se_ratio > 0.0 && se_ratio <= 1.0, "se_ratio must lie in (0, 1]");
}

int BlockSpec::expanded_channels() const {
  return static_cast<int>(std::lround(in_channels * expansion));
}

void BackboneSpec::validate() const {
  stem.validate();
  require(output_stride == 16 || output_stride == 32, "output_stride must be 16 or 32");
  int product = stem.stride;
  int width = stem.out_channels;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& st = stages[i];
    st.block.validate();
    require(st.repeat >= 1, "stage repeat must be >= 1");
    require(st.block.in_channels == width,
            "stage " + std::to_string(i) + " in_channels " + std::to_string(st.block.in_channels) +
                " does not match preceding width " + std::to_string(width));
    require(st.block.out_channels >= width, "stage widths must be non-decreasing");
    product *= st.block.stride;
    width = st.block.out_channels;
  }
  require(product == output_stride, "stride product " + std::to_string(product) +
                                        " does not equal output_stride " +
                                        std::to_string(output_stride));
}

void to_json(nlohmann::json& j, const BlockSpec& s) {
  j = nlohmann::json{{"family", std::string(to_string(s.family))},
                     {"in_channels", s.in_channels},
                     {"out_channels", s.out_channels},
                     {"stride", s.stride},
                     {"kernel", s.kernel},
                     {"expansion", s.expansion},
                     {"se_ratio", s.se_ratio}};
}

void from_json(const nlohmann::json& j, BlockSpec& s) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "family") s.family = parse_block_family(it->get<std::string>());
    else if (k == "in_channels") s.in_channels = it->get<int>();
    else if (k == "out_channels") s.out_channels = it->get<int>();
    else if (k == "stride") s.stride = it->get<int>();
    else if (k == "kernel") s.kernel = it->get<int>();
    else if (k == "expansion") s.expansion = it->get<double>();
    else if (k == "se_ratio") s.se_ratio = it->get<double>();
    else throw Error("unknown key '" + k + "' in block spec");
  }
}

void to_json(nlohmann::json& j, const BackboneSpec& s) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& st : s.stages) stages.push_back({{"block", st.block}, {"repeat", st.repeat}});
  j = nlohmann::json{{"stem", s.stem},
                     {"stages", stages},
                     {"output_stride", s.output_stride},
                     {"normalization", s.normalization}};
}

void from_json(const nlohmann::json& j, BackboneSpec& s) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "stem") s.stem = it->get<BlockSpec>();
    else if (k == "output_stride") s.output_stride = it->get<int>();
    else if (k == "normalization") s.normalization = it->get<bool>();
    else if (k == "stages") {
      s.stages.clear();
      for (const auto& st : *it) {
        StageSpec stage;
        for (auto f = st.begin(); f != st.end(); ++f) {
          if (f.key() == "block") stage.block = f->get<BlockSpec>();
          else if (f.key() == "repeat") stage.repeat = f->get<int>();
          else throw Error("unknown key '" + f.key() + "' in stage spec");
        }
        s.stages.push_back(stage);
      }
    } else {
      throw Error("unknown key '" + k + "' in backbone spec");
    }
  }
}

std::vector<std::string> backbone_families() {
  return {"unet", "resnet", "mobilenet", "xception", "efficientnet"};
}

BackboneSpec default_backbone(std::string_view family, int output_stride,
                              const BackboneScale& scale) {
  require(output_stride == 16 || output_stride == 32, "output_stride must be 16 or 32");
  BlockFamily stage_family;
  if (family == "unet") stage_family = BlockFamily::Plain;
  else if (family == "resnet") stage_family = BlockFamily::Residual;
  else if (family == "mobilenet") stage_family = BlockFamily::Dsc;
  else if (family == "xception") stage_family = BlockFamily::DscResidual;
  else if (family == "efficientnet") stage_family = BlockFamily::MBConvSE;
  else throw Error("unknown backbone family '" + std::string(family) + "'");

  BackboneSpec spec;
  spec.output_stride = output_stride;
  spec.normalization = scale.normalization;
  // U-Net keeps a full-resolution stem; the others downsample immediately.
  spec.stem.family = BlockFamily::Plain;
  spec.stem.in_channels = scale.in_channels;
  spec.stem.out_channels = scale.stem_width;
  spec.stem.stride = family == "unet" ? 1 : 2;

  int stride = spec.stem.stride;
  int width = scale.stem_width;
  while (stride < output_stride) {
    StageSpec st;
    st.block.family = stage_family;
    st.block.in_channels = width;
    st.block.out_channels = std::min(width * 2, std::max(scale.width_cap, width));
    st.block.stride = 2;
    st.repeat = scale.repeat;
    spec.stages.push_back(st);
    width = st.block.out_channels;
    stride *= 2;
  }
  spec.validate();
  return spec;
}

BackboneSpec backbone_from_preset(const nlohmann::json& j, int output_stride) {
  std::string family;
  BackboneScale scale;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "family") family = it->get<std::string>();
    else if (k == "stem_width") scale.stem_width = it->get<int>();
    else if (k == "width_cap") scale.width_cap = it->get<int>();
    else if (k == "repeat") scale.repeat = it->get<int>();
    else if (k == "in_channels") scale.in_channels = it->get<int>();
    else if (k == "normalization") scale.normalization = it->get<bool>();
    else throw Error("unknown key '" + k + "' in backbone preset");
  }
  require(!family.empty(), "backbone preset needs a family");
  return default_backbone(family, output_stride, scale);
}

std::size_t conv_weight_count(const BlockSpec& s) {
  const std::size_t k2 = static_cast<std::size_t>(s.kernel) * s.kernel;
  const std::size_t in = s.in_channels, out = s.out_channels;
  const bool projection = s.stride != 1 || in != out;
  switch (s.family) {
    case BlockFamily::Plain: return k2 * in * out + k2 * out * out;
    case BlockFamily::Residual: return k2 * in * out + k2 * out * out + (projection ? in * out : 0);
    case BlockFamily::Dsc: return k2 * in + in * out;
    case BlockFamily::DscResidual:
      return k2 * in + in * out + k2 * out + out * out + (projection ? in * out : 0);
    case BlockFamily::MBConvSE: {
      const std::size_t mid = static_cast<std::size_t>(s.expanded_channels());
      return (mid != in ? in * mid : 0) + k2 * mid + mid * out;
    }
  }
  return 0;
}

namespace nn {

int SqueezeExcite::reduced_width(int channels, double se_ratio) {
  return std::max(1, static_cast<int>(std::lround(channels * se_ratio)));
}

SqueezeExcite::SqueezeExcite(int channels, double se_ratio)
    : channels_(channels),
      reduced_(reduced_width(channels, se_ratio)),
      reduce_(channels, reduced_, std::sqrt(2.0 / channels)),
      expand_(reduced_, channels, std::sqrt(2.0 / reduced_)) {}

Tensor SqueezeExcite::forward(const Tensor& x, Pass pass) {
  require(x.c() == channels_, "squeeze_excite channel mismatch");
  Tensor s = gate_.forward(expand_.forward(act_.forward(reduce_.forward(pool_.forward(x, pass), pass), pass), pass), pass);
  Tensor y(x.shape());
  const int C = channels_;
  const std::size_t hw = static_cast<std::size_t>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = (static_cast<std::size_t>(n) * hw + p) * C;
      for (int c = 0; c < C; ++c) y[base + c] = x[base + c] * s[static_cast<std::size_t>(n) * C + c];
    }
  if (pass == Pass::Train) {
    input_ = x;
    scale_ = std::move(s);
  }
  return y;
}

Tensor SqueezeExcite::backward(const Tensor& dy) {
  const int C = channels_;
  const std::size_t hw = static_cast<std::size_t>(dy.h()) * dy.w();
  Tensor dx(dy.shape());
  Tensor ds({dy.n(), 1, 1, C});
  for (int n = 0; n < dy.n(); ++n)
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = (static_cast<std::size_t>(n) * hw + p) * C;
      for (int c = 0; c < C; ++c) {
        const std::size_t sc = static_cast<std::size_t>(n) * C + c;
        dx[base + c] = dy[base + c] * scale_[sc];
        ds[sc] += dy[base + c] * input_[base + c];
      }
    }
  Tensor dpool = reduce_.backward(act_.backward(expand_.backward(gate_.backward(ds))));
  Tensor dgap = pool_.backward(dpool);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dgap[i];
  return dx;
}

void SqueezeExcite::collect(const std::string& prefix, Registry& out) {
  reduce_.collect(scoped(prefix, "reduce"), out);
  expand_.collect(scoped(prefix, "expand"), out);
}

namespace {

void add_norm_act(Sequential& seq, const std::string& tag, int channels, bool norm,
                  std::optional<ActivationKind> act) {
  if (norm) seq.emplace<BatchNorm>(tag + "_bn", channels);
  if (act) seq.emplace<Activation>(tag + "_act", *act);
}

}  // namespace

Block::Block(const BlockSpec& spec, bool norm) : spec_(spec) {
  spec.validate();
  const int in = spec.in_channels, out = spec.out_channels, k = spec.kernel, s = spec.stride;
  const bool bias = !norm;
  const bool needs_projection = s != 1 || in != out;
  const auto relu = ActivationKind::Relu;
  const auto swish = ActivationKind::Swish;

  switch (spec.family) {
    case BlockFamily::Plain:
      if (s == 2) body_.emplace<MaxPool2>("pool");
      body_.emplace<Conv2d>("conv1", in, out, k, 1, bias);
      add_norm_act(body_, "conv1", out, norm, relu);
      body_.emplace<Conv2d>("conv2", out, out, k, 1, bias);
      add_norm_act(body_, "conv2", out, norm, relu);
      break;
    case BlockFamily::Residual:
      body_.emplace<Conv2d>("conv1", in, out, k, s, bias);
      add_norm_act(body_, "conv1", out, norm, relu);
      body_.emplace<Conv2d>("conv2", out, out, k, 1, bias);
      add_norm_act(body_, "conv2", out, norm, std::nullopt);
      residual_ = true;
      break;
    case BlockFamily::Dsc:
      body_.emplace<DepthwiseConv2d>("depthwise", in, k, s);
      add_norm_act(body_, "depthwise", in, norm, relu);
      body_.emplace<Conv2d>("pointwise", in, out, 1, 1, bias);
      add_norm_act(body_, "pointwise", out, norm, relu);
      break;
    case BlockFamily::DscResidual:
      body_.emplace<DepthwiseConv2d>("depthwise1", in, k, s);
      body_.emplace<Conv2d>("pointwise1", in, out, 1, 1, bias);
      add_norm_act(body_, "sep1", out, norm, relu);
      body_.emplace<DepthwiseConv2d>("depthwise2", out, k, 1);
      body_.emplace<Conv2d>("pointwise2", out, out, 1, 1, bias);
      add_norm_act(body_, "sep2", out, norm, std::nullopt);
      residual_ = true;
      break;
    case BlockFamily::MBConvSE: {
      const int mid = spec.expanded_channels();
      if (mid != in) {
        body_.emplace<Conv2d>("expand", in, mid, 1, 1, bias);
        add_norm_act(body_, "expand", mid, norm, swish);
      }
      body_.emplace<DepthwiseConv2d>("depthwise", mid, k, s);
      add_norm_act(body_, "depthwise", mid, norm, swish);
      body_.emplace<SqueezeExcite>("se", mid, spec.se_ratio);
      body_.emplace<Conv2d>("project", mid, out, 1, 1, bias);
      add_norm_act(body_, "project", out, norm, std::nullopt);
      residual_ = !needs_projection;
      break;
    }
  }

  if (residual_ && needs_projection && spec.family != BlockFamily::MBConvSE) {
    shortcut_.emplace<Conv2d>("conv", in, out, 1, s, bias);
    if (norm) shortcut_.emplace<BatchNorm>("bn", out);
  }
}

Tensor Block::forward(const Tensor& x, Pass pass) {
  require(x.c() == spec_.in_channels,
          std::string(to_string(spec_.family)) + " block expects " +
              std::to_string(spec_.in_channels) + " input channels, got " + std::to_string(x.c()));
  Tensor y = body_.forward(x, pass);
  if (!residual_) return y;
  if (shortcut_.empty()) {
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += x[i];
  } else {
    const Tensor sc = shortcut_.forward(x, pass);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += sc[i];
  }
  return y;
}

Tensor Block::backward(const Tensor& dy) {
  Tensor dx = body_.backward(dy);
  if (!residual_) return dx;
  const Tensor dsc = shortcut_.empty() ? dy : shortcut_.backward(dy);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsc[i];
  return dx;
}

void Block::collect(const std::string& prefix, Registry& out) {
  body_.collect(prefix, out);
  shortcut_.collect(scoped(prefix, "shortcut"), out);
}

// ---------------------------------------------------------------------------

Backbone::Backbone(const BackboneSpec& spec) : spec_(spec) {
  spec.validate();
  std::vector<BlockSpec> plan{spec.stem};
  for (const auto& st : spec.stages) {
    plan.push_back(st.block);
    for (int r = 1; r < st.repeat; ++r) {
      BlockSpec rest = st.block;
      rest.in_channels = rest.out_channels;
      rest.stride = 1;
      plan.push_back(rest);
    }
  }

  std::vector<int> stride_after(plan.size());
  int stride = 1;
  for (std::size_t i = 0; i < plan.size(); ++i) {
    blocks_.push_back(std::make_unique<Block>(plan[i], spec.normalization));
    stride *= plan[i].stride;
    stride_after[i] = stride;
  }
  // A tap is the last block output at each stride below the output stride.
  tap_after_block_.assign(plan.size(), -1);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    const bool last_at_stride = i + 1 == plan.size() || stride_after[i + 1] != stride_after[i];
    if (last_at_stride && stride_after[i] < spec.output_stride) {
      tap_after_block_[i] = static_cast<int>(taps_.size());
      taps_.push_back({stride_after[i], plan[i].out_channels});
    }
  }
  out_channels_ = plan.back().out_channels;
}

BackboneOutput Backbone::forward(const Tensor& x, Pass pass) {
  BackboneOutput out;
  out.taps.resize(taps_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i]->forward(h, pass);
    if (tap_after_block_[i] >= 0) out.taps[static_cast<std::size_t>(tap_after_block_[i])] = h;
  }
  out.final = std::move(h);
  return out;
}

Tensor Backbone::backward(const Tensor& d_final, const std::vector<Tensor>& d_taps) {
  Tensor g = d_final;
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    const int t = tap_after_block_[i];
    if (t >= 0 && static_cast<std::size_t>(t) < d_taps.size() && !d_taps[t].empty()) {
      const Tensor& extra = d_taps[static_cast<std::size_t>(t)];
      require(extra.shape() == g.shape(), "backbone tap gradient shape mismatch");
      for (std::size_t k = 0; k < g.size(); ++k) g[k] += extra[k];
    }
    g = blocks_[i]->backward(g);
  }
  return g;
}

void Backbone::collect(const std::string& prefix, Registry& out) {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    blocks_[i]->collect(scoped(prefix, (i == 0 ? std::string("stem") : "block" + std::to_string(i))), out);
}

}  // namespace nn
}  // namespace lesion
