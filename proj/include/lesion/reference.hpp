#pragma once

// Serial reference kernels. Straight transcriptions of the defining sums,
// kept for testing and benchmarking the parallel kernels in kernels.hpp.

#include <span>

#include "lesion/kernels.hpp"

namespace lesion::reference {

Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
              const ConvGeometry& g);
Tensor conv2d_grad_input(const Tensor& dy, std::span<const double> weight, const ConvGeometry& g,
                         const Shape& input_shape);
void conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                        std::span<double> dweight);

Tensor depthwise_conv2d(const Tensor& x, std::span<const double> weight, const ConvGeometry& g);
Tensor depthwise_conv2d_grad_input(const Tensor& dy, std::span<const double> weight,
                                   const ConvGeometry& g, const Shape& input_shape);
void depthwise_conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                                  std::span<double> dweight);

Tensor upsample2x(const Tensor& x);
Tensor upsample2x_grad(const Tensor& dy, const Shape& input_shape);

}  // namespace lesion::reference
