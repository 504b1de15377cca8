#pragma once

// OpenMP-parallel compute kernels. Every kernel here has a serial twin in
// reference.hpp with the same signature; tests hold the two in agreement.
//
// Layouts: activations NHWC; standard conv weights [k][k][cin][cout];
// depthwise weights [k][k][c]. Spatial padding is (k-1)/2 on the leading
// edge so output extent is ceil(in / stride) for odd k.

#include <cstdint>
#include <span>
#include <vector>

#include "lesion/tensor.hpp"

namespace lesion {

struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int in_channels = 0;
  int out_channels = 0;  // ignored by depthwise kernels

  int pad() const { return (kernel - 1) / 2; }
  Shape output_shape(const Shape& in) const;
  std::size_t weight_count() const {
    return static_cast<std::size_t>(kernel) * kernel * in_channels * out_channels;
  }
  std::size_t depthwise_weight_count() const {
    return static_cast<std::size_t>(kernel) * kernel * in_channels;
  }
};

/// ceil(in / stride)
inline int strided_extent(int in, int stride) { return (in - 1) / stride + 1; }

namespace kernels {

Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
              const ConvGeometry& g);
Tensor conv2d_grad_input(const Tensor& dy, std::span<const double> weight, const ConvGeometry& g,
                         const Shape& input_shape);
/// Accumulates into dweight.
void conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                        std::span<double> dweight);
/// Accumulates per-channel sums of dy into dbias.
void bias_grad(const Tensor& dy, std::span<double> dbias);

Tensor depthwise_conv2d(const Tensor& x, std::span<const double> weight, const ConvGeometry& g);
Tensor depthwise_conv2d_grad_input(const Tensor& dy, std::span<const double> weight,
                                   const ConvGeometry& g, const Shape& input_shape);
void depthwise_conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                                  std::span<double> dweight);

/// 2x2 max pooling, stride 2, ceil mode. `argmax` receives the flat input index per output.
Tensor max_pool2(const Tensor& x, std::vector<std::size_t>& argmax);
Tensor max_pool2_grad(const Tensor& dy, std::span<const std::size_t> argmax, const Shape& input_shape);

/// Bilinear x2 upsampling with half-pixel centers and edge clamping.
Tensor upsample2x(const Tensor& x);
Tensor upsample2x_grad(const Tensor& dy, const Shape& input_shape);

/// General resize used by the data path. Half-pixel bilinear, edge clamped.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_nearest(const Tensor& x, int out_h, int out_w);

}  // namespace kernels
}  // namespace lesion
