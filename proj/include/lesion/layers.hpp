#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "lesion/kernels.hpp"
#include "lesion/tensor.hpp"

namespace lesion::nn {

/// Train passes cache activations for backward and update normalization
/// statistics. Infer passes touch no layer state, so a built model can serve
/// concurrent inference.
enum class Pass { Infer, Train };

/// A trainable tensor with its gradient accumulator.
struct Param {
  std::vector<double> value;
  std::vector<double> grad;
  double init_std = 0.0;    // He-normal std when > 0
  double init_const = 0.0;  // otherwise filled with this constant

  Param() = default;
  explicit Param(std::size_t n, double std_dev = 0.0, double constant = 0.0)
      : value(n, 0.0), grad(n, 0.0), init_std(std_dev), init_const(constant) {}
  std::size_t size() const { return value.size(); }
};

struct ParamRef {
  std::string name;
  Param* param;
};

struct BufferRef {
  std::string name;
  std::vector<double>* buffer;
};

/// Flat, ordered view of every parameter and non-trainable buffer of a model.
struct Registry {
  std::vector<ParamRef> params;
  std::vector<BufferRef> buffers;

  std::size_t param_count() const;
  Param* find(const std::string& name) const;
  void zero_grad() const;
};

std::string scoped(const std::string& prefix, const std::string& name);

class Layer {
public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Pass pass) = 0;
  /// Gradient w.r.t. the input of the most recent Train forward. Parameter
  /// gradients accumulate into Param::grad.
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual void collect(const std::string& prefix, Registry& out) { (void)prefix, (void)out; }

  Registry registry();
};

/// Draw every parameter from its init rule with a generator seeded by `seed`.
void initialize(const Registry& reg, std::uint64_t seed);

class Conv2d final : public Layer {
public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, bool bias);
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;

  const ConvGeometry& geometry() const { return geom_; }
  std::size_t weight_count() const { return weight_.size(); }

private:
  ConvGeometry geom_;
  bool has_bias_;
  Param weight_;
  Param bias_;
  Tensor input_;
};

class DepthwiseConv2d final : public Layer {
public:
  DepthwiseConv2d(int channels, int kernel, int stride);
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;

  std::size_t weight_count() const { return weight_.size(); }

private:
  ConvGeometry geom_;
  Param weight_;
  Tensor input_;
};

/// Per-channel batch normalization over (n, h, w).
class BatchNorm final : public Layer {
public:
  explicit BatchNorm(int channels, double momentum = 0.9, double eps = 1e-3);
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;

private:
  int channels_;
  double momentum_;
  double eps_;
  Param gamma_;
  Param beta_;
  std::vector<double> running_mean_;
  std::vector<double> running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
};

enum class ActivationKind { Relu, Swish, Sigmoid };

class Activation final : public Layer {
public:
  explicit Activation(ActivationKind kind) : kind_(kind) {}
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;

private:
  ActivationKind kind_;
  Tensor input_;
  Tensor output_;
};

class MaxPool2 final : public Layer {
public:
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;

private:
  Shape input_shape_;
  std::vector<std::size_t> argmax_;
};

class Upsample2x final : public Layer {
public:
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;

private:
  Shape input_shape_;
};

/// Mean over spatial positions: (n, h, w, c) -> (n, 1, 1, c).
class GlobalAvgPool final : public Layer {
public:
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;

private:
  Shape input_shape_;
};

/// Fully connected layer on (n, 1, 1, in) tensors.
class Dense final : public Layer {
public:
  Dense(int in_features, int out_features, double init_std);
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;

private:
  int in_;
  int out_;
  Param weight_;  // [in][out]
  Param bias_;
  Tensor input_;
};

/// Inverted dropout. Its mask stream is seeded, so Train passes are reproducible.
class Dropout final : public Layer {
public:
  Dropout(double rate, std::uint64_t seed) : rate_(rate), rng_(seed) {}
  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;

private:
  double rate_;
  std::mt19937_64 rng_;
  std::vector<double> mask_;
};

class Sequential final : public Layer {
public:
  Sequential& add(std::string name, std::unique_ptr<Layer> layer);
  template <typename L, typename... Args>
  L& emplace(std::string name, Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    add(std::move(name), std::move(layer));
    return ref;
  }

  Tensor forward(const Tensor& x, Pass pass) override;
  Tensor backward(const Tensor& dy) override;
  void collect(const std::string& prefix, Registry& out) override;
  bool empty() const { return layers_.empty(); }

private:
  std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

}  // namespace lesion::nn
