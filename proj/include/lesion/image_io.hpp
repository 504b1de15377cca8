#pragma once

#include <filesystem>

#include "lesion/tensor.hpp"

namespace lesion {

/// Decode to a (1,h,w,3) tensor of 8-bit RGB values in [0,255].
Tensor read_rgb(const std::filesystem::path& path);
/// Decode to a (1,h,w,1) tensor of 8-bit gray values in [0,255].
Tensor read_gray(const std::filesystem::path& path);

/// Write a (1,h,w,1|3) tensor of [0,255] values as PNG (rounded, clamped).
void write_png(const std::filesystem::path& path, const Tensor& image);

}  // namespace lesion
