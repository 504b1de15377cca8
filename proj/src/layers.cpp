#include "lesion/layers.hpp"

#include <algorithm>
#include <cmath>

namespace lesion::nn {

std::size_t Registry::param_count() const {
  std::size_t total = 0;
  for (const auto& p : params) total += p.param->size();
  return total;
}

Param* Registry::find(const std::string& name) const {
  for (const auto& p : params)
    if (p.name == name) return p.param;
  return nullptr;
}

void Registry::zero_grad() const {
  for (const auto& p : params) std::fill(p.param->grad.begin(), p.param->grad.end(), 0.0);
}

std::string scoped(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

Registry Layer::registry() {
  Registry reg;
  collect("", reg);
  return reg;
}

void initialize(const Registry& reg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& ref : reg.params) {
    Param& p = *ref.param;
    if (p.init_std > 0.0) {
      std::normal_distribution<double> dist(0.0, p.init_std);
      for (double& v : p.value) v = dist(rng);
    } else {
      std::fill(p.value.begin(), p.value.end(), p.init_const);
    }
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, bool bias)
    : geom_{kernel, stride, in_channels, out_channels},
      has_bias_(bias),
      weight_(geom_.weight_count(), std::sqrt(2.0 / (kernel * kernel * in_channels))),
      bias_(bias ? static_cast<std::size_t>(out_channels) : 0) {
  require(in_channels > 0 && out_channels > 0, "conv channels must be positive");
}

Tensor Conv2d::forward(const Tensor& x, Pass pass) {
  if (pass == Pass::Train) input_ = x;
  return kernels::conv2d(x, weight_.value, bias_.value, geom_);
}

Tensor Conv2d::backward(const Tensor& dy) {
  kernels::conv2d_grad_weight(input_, dy, geom_, weight_.grad);
  if (has_bias_) kernels::bias_grad(dy, bias_.grad);
  return kernels::conv2d_grad_input(dy, weight_.value, geom_, input_.shape());
}

void Conv2d::collect(const std::string& prefix, Registry& out) {
  out.params.push_back({scoped(prefix, "weight"), &weight_});
  if (has_bias_) out.params.push_back({scoped(prefix, "bias"), &bias_});
}

DepthwiseConv2d::DepthwiseConv2d(int channels, int kernel, int stride)
    : geom_{kernel, stride, channels, channels},
      weight_(geom_.depthwise_weight_count(), std::sqrt(2.0 / (kernel * kernel))) {
  require(channels > 0, "depthwise channels must be positive");
}

Tensor DepthwiseConv2d::forward(const Tensor& x, Pass pass) {
  if (pass == Pass::Train) input_ = x;
  return kernels::depthwise_conv2d(x, weight_.value, geom_);
}

Tensor DepthwiseConv2d::backward(const Tensor& dy) {
  kernels::depthwise_conv2d_grad_weight(input_, dy, geom_, weight_.grad);
  return kernels::depthwise_conv2d_grad_input(dy, weight_.value, geom_, input_.shape());
}

void DepthwiseConv2d::collect(const std::string& prefix, Registry& out) {
  out.params.push_back({scoped(prefix, "weight"), &weight_});
}

// ---------------------------------------------------------------------------

BatchNorm::BatchNorm(int channels, double momentum, double eps)
    : channels_(channels),
      momentum_(momentum),
      eps_(eps),
      gamma_(static_cast<std::size_t>(channels), 0.0, 1.0),
      beta_(static_cast<std::size_t>(channels)),
      running_mean_(static_cast<std::size_t>(channels), 0.0),
      running_var_(static_cast<std::size_t>(channels), 1.0) {}

Tensor BatchNorm::forward(const Tensor& x, Pass pass) {
  require(x.c() == channels_, "batchnorm channel mismatch");
  const int C = channels_;
  const std::size_t pixels = x.size() / static_cast<std::size_t>(C);
  Tensor y(x.shape());

  if (pass == Pass::Infer) {
    std::vector<double> scale(C), shift(C);
    for (int c = 0; c < C; ++c) {
      scale[c] = gamma_.value[c] / std::sqrt(running_var_[c] + eps_);
      shift[c] = beta_.value[c] - running_mean_[c] * scale[c];
    }
    for (std::size_t p = 0; p < pixels; ++p)
      for (int c = 0; c < C; ++c) y[p * C + c] = x[p * C + c] * scale[c] + shift[c];
    return y;
  }

  std::vector<double> mean(C, 0.0), var(C, 0.0);
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < C; ++c) mean[c] += x[p * C + c];
  for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(pixels);
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < C; ++c) {
      const double d = x[p * C + c] - mean[c];
      var[c] += d * d;
    }
  for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(pixels);

  inv_std_.assign(C, 0.0);
  for (int c = 0; c < C; ++c) {
    inv_std_[c] = 1.0 / std::sqrt(var[c] + eps_);
    running_mean_[c] = momentum_ * running_mean_[c] + (1.0 - momentum_) * mean[c];
    running_var_[c] = momentum_ * running_var_[c] + (1.0 - momentum_) * var[c];
  }
  xhat_ = Tensor(x.shape());
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < C; ++c) {
      const double xh = (x[p * C + c] - mean[c]) * inv_std_[c];
      xhat_[p * C + c] = xh;
      y[p * C + c] = gamma_.value[c] * xh + beta_.value[c];
    }
  return y;
}

Tensor BatchNorm::backward(const Tensor& dy) {
  const int C = channels_;
  const std::size_t pixels = dy.size() / static_cast<std::size_t>(C);
  const double m = static_cast<double>(pixels);
  std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < C; ++c) {
      const double g = dy[p * C + c];
      sum_g[c] += g;
      sum_gx[c] += g * xhat_[p * C + c];
    }
  for (int c = 0; c < C; ++c) {
    beta_.grad[c] += sum_g[c];
    gamma_.grad[c] += sum_gx[c];
  }
  Tensor dx(dy.shape());
  for (std::size_t p = 0; p < pixels; ++p)
    for (int c = 0; c < C; ++c) {
      const std::size_t i = p * C + c;
      dx[i] = gamma_.value[c] * inv_std_[c] / m *
              (m * dy[i] - sum_g[c] - xhat_[i] * sum_gx[c]);
    }
  return dx;
}

void BatchNorm::collect(const std::string& prefix, Registry& out) {
  out.params.push_back({scoped(prefix, "gamma"), &gamma_});
  out.params.push_back({scoped(prefix, "beta"), &beta_});
  out.buffers.push_back({scoped(prefix, "running_mean"), &running_mean_});
  out.buffers.push_back({scoped(prefix, "running_var"), &running_var_});
}

// ---------------------------------------------------------------------------

namespace {
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
}  // namespace

Tensor Activation::forward(const Tensor& x, Pass pass) {
  Tensor y(x.shape());
  const std::size_t n = x.size();
  switch (kind_) {
    case ActivationKind::Relu:
      // written so a NaN passes through instead of becoming 0
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] < 0.0 ? 0.0 : x[i];
      break;
    case ActivationKind::Swish:
      for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * sigmoid(x[i]);
      break;
    case ActivationKind::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) y[i] = sigmoid(x[i]);
      break;
  }
  if (pass == Pass::Train) {
    input_ = x;
    if (kind_ == ActivationKind::Sigmoid) output_ = y;
  }
  return y;
}

Tensor Activation::backward(const Tensor& dy) {
  Tensor dx(dy.shape());
  const std::size_t n = dy.size();
  switch (kind_) {
    case ActivationKind::Relu:
      for (std::size_t i = 0; i < n; ++i) dx[i] = input_[i] > 0.0 ? dy[i] : 0.0;
      break;
    case ActivationKind::Swish:
      for (std::size_t i = 0; i < n; ++i) {
        const double s = sigmoid(input_[i]);
        dx[i] = dy[i] * (s + input_[i] * s * (1.0 - s));
      }
      break;
    case ActivationKind::Sigmoid:
      for (std::size_t i = 0; i < n; ++i) dx[i] = dy[i] * output_[i] * (1.0 - output_[i]);
      break;
  }
  return dx;
}

Tensor MaxPool2::forward(const Tensor& x, Pass pass) {
  std::vector<std::size_t> argmax;
  Tensor y = kernels::max_pool2(x, argmax);
  if (pass == Pass::Train) {
    input_shape_ = x.shape();
    argmax_ = std::move(argmax);
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& dy) {
  return kernels::max_pool2_grad(dy, argmax_, input_shape_);
}

Tensor Upsample2x::forward(const Tensor& x, Pass pass) {
  if (pass == Pass::Train) input_shape_ = x.shape();
  return kernels::upsample2x(x);
}

Tensor Upsample2x::backward(const Tensor& dy) { return kernels::upsample2x_grad(dy, input_shape_); }

Tensor GlobalAvgPool::forward(const Tensor& x, Pass pass) {
  if (pass == Pass::Train) input_shape_ = x.shape();
  Tensor y({x.n(), 1, 1, x.c()});
  const double area = static_cast<double>(x.h()) * x.w();
  for (int n = 0; n < x.n(); ++n)
    for (int yy = 0; yy < x.h(); ++yy)
      for (int xx = 0; xx < x.w(); ++xx)
        for (int c = 0; c < x.c(); ++c) y(n, 0, 0, c) += x(n, yy, xx, c);
  for (double& v : y.values()) v /= area;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& dy) {
  Tensor dx(input_shape_);
  const double area = static_cast<double>(input_shape_.h) * input_shape_.w;
  for (int n = 0; n < dx.n(); ++n)
    for (int yy = 0; yy < dx.h(); ++yy)
      for (int xx = 0; xx < dx.w(); ++xx)
        for (int c = 0; c < dx.c(); ++c) dx(n, yy, xx, c) = dy(n, 0, 0, c) / area;
  return dx;
}

Dense::Dense(int in_features, int out_features, double init_std)
    : in_(in_features),
      out_(out_features),
      weight_(static_cast<std::size_t>(in_features) * out_features, init_std),
      bias_(static_cast<std::size_t>(out_features)) {
  require(in_features > 0 && out_features > 0, "dense features must be positive");
}

Tensor Dense::forward(const Tensor& x, Pass pass) {
  require(x.h() == 1 && x.w() == 1 && x.c() == in_,
          "dense expects (n,1,1," + std::to_string(in_) + "), got " + x.shape().str());
  if (pass == Pass::Train) input_ = x;
  Tensor y({x.n(), 1, 1, out_});
  for (int n = 0; n < x.n(); ++n) {
    double* out = y.data() + static_cast<std::size_t>(n) * out_;
    std::copy(bias_.value.begin(), bias_.value.end(), out);
    for (int i = 0; i < in_; ++i) {
      const double v = x[static_cast<std::size_t>(n) * in_ + i];
      const double* wrow = weight_.value.data() + static_cast<std::size_t>(i) * out_;
      for (int o = 0; o < out_; ++o) out[o] += v * wrow[o];
    }
  }
  return y;
}

Tensor Dense::backward(const Tensor& dy) {
  Tensor dx(input_.shape());
  for (int n = 0; n < dy.n(); ++n) {
    const double* go = dy.data() + static_cast<std::size_t>(n) * out_;
    for (int o = 0; o < out_; ++o) bias_.grad[o] += go[o];
    for (int i = 0; i < in_; ++i) {
      const double v = input_[static_cast<std::size_t>(n) * in_ + i];
      const double* wrow = weight_.value.data() + static_cast<std::size_t>(i) * out_;
      double* grow = weight_.grad.data() + static_cast<std::size_t>(i) * out_;
      double acc = 0.0;
      for (int o = 0; o < out_; ++o) {
        grow[o] += v * go[o];
        acc += go[o] * wrow[o];
      }
      dx[static_cast<std::size_t>(n) * in_ + i] = acc;
    }
  }
  return dx;
}

void Dense::collect(const std::string& prefix, Registry& out) {
  out.params.push_back({scoped(prefix, "weight"), &weight_});
  out.params.push_back({scoped(prefix, "bias"), &bias_});
}

Tensor Dropout::forward(const Tensor& x, Pass pass) {
  if (pass == Pass::Infer) return x;
  if (rate_ <= 0.0) {
    mask_.clear();
    return x;
  }
  std::bernoulli_distribution keep(1.0 - rate_);
  mask_.resize(x.size());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask_[i] = keep(rng_) ? 1.0 / (1.0 - rate_) : 0.0;
    y[i] = x[i] * mask_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& dy) {
  if (mask_.empty()) return dy;
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
  return dx;
}

Sequential& Sequential::add(std::string name, std::unique_ptr<Layer> layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
  return *this;
}

Tensor Sequential::forward(const Tensor& x, Pass pass) {
  Tensor h = x;
  for (auto& [name, layer] : layers_) h = layer->forward(h, pass);
  return h;
}

Tensor Sequential::backward(const Tensor& dy) {
  Tensor g = dy;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = it->second->backward(g);
  return g;
}

void Sequential::collect(const std::string& prefix, Registry& out) {
  for (auto& [name, layer] : layers_) layer->collect(scoped(prefix, name), out);
}

}  // namespace lesion::nn
