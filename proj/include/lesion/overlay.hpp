#pragma once

#include "lesion/tensor.hpp"

namespace lesion {

/// Foreground pixels of a (1,h,w,1) binary mask with a 4-neighbour outside
/// the mask. Pixels beyond the border count as outside.
Tensor mask_boundary(const Tensor& mask);

/// Draw boundaries over an 8-bit (1,h,w,3) image: prediction green, ground
/// truth blue, pixels on both cyan.
Tensor render_overlay(const Tensor& image_rgb8, const Tensor& truth, const Tensor& pred);

}  // namespace lesion
