#include "lesion/reference.hpp"

#include <algorithm>
#include <cmath>

namespace lesion::reference {
namespace {

std::size_t widx(const ConvGeometry& g, int ky, int kx, int ci, int co) {
  return ((static_cast<std::size_t>(ky) * g.kernel + kx) * g.in_channels + ci) * g.out_channels + co;
}

std::size_t dwidx(const ConvGeometry& g, int ky, int kx, int ch) {
  return (static_cast<std::size_t>(ky) * g.kernel + kx) * g.in_channels + ch;
}

bool inside(const Tensor& t, int y, int x) { return y >= 0 && y < t.h() && x >= 0 && x < t.w(); }

// Source coordinate and weights for half-pixel bilinear sampling along one axis.
void bilinear_source(int o, int in, int out, int& lo, int& hi, double& frac) {
  double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
  src = std::max(src, 0.0);
  lo = std::min(static_cast<int>(std::floor(src)), in - 1);
  hi = std::min(lo + 1, in - 1);
  frac = src - lo;
}

}  // namespace

Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
              const ConvGeometry& g) {
  require(x.c() == g.in_channels, "reference conv: channel mismatch");
  Tensor y(g.output_shape(x.shape()));
  for (int n = 0; n < y.n(); ++n)
    for (int oy = 0; oy < y.h(); ++oy)
      for (int ox = 0; ox < y.w(); ++ox)
        for (int co = 0; co < g.out_channels; ++co) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = oy * g.stride + ky - g.pad();
              const int ix = ox * g.stride + kx - g.pad();
              if (!inside(x, iy, ix)) continue;
              for (int ci = 0; ci < g.in_channels; ++ci)
                acc += x(n, iy, ix, ci) * weight[widx(g, ky, kx, ci, co)];
            }
          y(n, oy, ox, co) = acc;
        }
  return y;
}

Tensor conv2d_grad_input(const Tensor& dy, std::span<const double> weight, const ConvGeometry& g,
                         const Shape& input_shape) {
  Tensor dx(input_shape);
  for (int n = 0; n < dy.n(); ++n)
    for (int oy = 0; oy < dy.h(); ++oy)
      for (int ox = 0; ox < dy.w(); ++ox)
        for (int ky = 0; ky < g.kernel; ++ky)
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int iy = oy * g.stride + ky - g.pad();
            const int ix = ox * g.stride + kx - g.pad();
            if (!inside(dx, iy, ix)) continue;
            for (int ci = 0; ci < g.in_channels; ++ci)
              for (int co = 0; co < g.out_channels; ++co)
                dx(n, iy, ix, ci) += dy(n, oy, ox, co) * weight[widx(g, ky, kx, ci, co)];
          }
  return dx;
}

void conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                        std::span<double> dweight) {
  for (int n = 0; n < dy.n(); ++n)
    for (int oy = 0; oy < dy.h(); ++oy)
      for (int ox = 0; ox < dy.w(); ++ox)
        for (int ky = 0; ky < g.kernel; ++ky)
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int iy = oy * g.stride + ky - g.pad();
            const int ix = ox * g.stride + kx - g.pad();
            if (!inside(x, iy, ix)) continue;
            for (int ci = 0; ci < g.in_channels; ++ci)
              for (int co = 0; co < g.out_channels; ++co)
                dweight[widx(g, ky, kx, ci, co)] += x(n, iy, ix, ci) * dy(n, oy, ox, co);
          }
}

Tensor depthwise_conv2d(const Tensor& x, std::span<const double> weight, const ConvGeometry& g) {
  require(x.c() == g.in_channels, "reference depthwise: channel mismatch");
  Tensor y({x.n(), strided_extent(x.h(), g.stride), strided_extent(x.w(), g.stride), x.c()});
  for (int n = 0; n < y.n(); ++n)
    for (int oy = 0; oy < y.h(); ++oy)
      for (int ox = 0; ox < y.w(); ++ox)
        for (int ch = 0; ch < y.c(); ++ch) {
          double acc = 0.0;
          for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx) {
              const int iy = oy * g.stride + ky - g.pad();
              const int ix = ox * g.stride + kx - g.pad();
              if (inside(x, iy, ix)) acc += x(n, iy, ix, ch) * weight[dwidx(g, ky, kx, ch)];
            }
          y(n, oy, ox, ch) = acc;
        }
  return y;
}

Tensor depthwise_conv2d_grad_input(const Tensor& dy, std::span<const double> weight,
                                   const ConvGeometry& g, const Shape& input_shape) {
  Tensor dx(input_shape);
  for (int n = 0; n < dy.n(); ++n)
    for (int oy = 0; oy < dy.h(); ++oy)
      for (int ox = 0; ox < dy.w(); ++ox)
        for (int ky = 0; ky < g.kernel; ++ky)
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int iy = oy * g.stride + ky - g.pad();
            const int ix = ox * g.stride + kx - g.pad();
            if (!inside(dx, iy, ix)) continue;
            for (int ch = 0; ch < dy.c(); ++ch)
              dx(n, iy, ix, ch) += dy(n, oy, ox, ch) * weight[dwidx(g, ky, kx, ch)];
          }
  return dx;
}

void depthwise_conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                                  std::span<double> dweight) {
  for (int n = 0; n < dy.n(); ++n)
    for (int oy = 0; oy < dy.h(); ++oy)
      for (int ox = 0; ox < dy.w(); ++ox)
        for (int ky = 0; ky < g.kernel; ++ky)
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int iy = oy * g.stride + ky - g.pad();
            const int ix = ox * g.stride + kx - g.pad();
            if (!inside(x, iy, ix)) continue;
            for (int ch = 0; ch < dy.c(); ++ch)
              dweight[dwidx(g, ky, kx, ch)] += x(n, iy, ix, ch) * dy(n, oy, ox, ch);
          }
}

Tensor upsample2x(const Tensor& x) {
  Tensor y({x.n(), 2 * x.h(), 2 * x.w(), x.c()});
  for (int n = 0; n < y.n(); ++n)
    for (int oy = 0; oy < y.h(); ++oy)
      for (int ox = 0; ox < y.w(); ++ox) {
        int y0, y1, x0, x1;
        double fy, fx;
        bilinear_source(oy, x.h(), y.h(), y0, y1, fy);
        bilinear_source(ox, x.w(), y.w(), x0, x1, fx);
        for (int ch = 0; ch < y.c(); ++ch)
          y(n, oy, ox, ch) = (1 - fy) * (1 - fx) * x(n, y0, x0, ch) + (1 - fy) * fx * x(n, y0, x1, ch) +
                             fy * (1 - fx) * x(n, y1, x0, ch) + fy * fx * x(n, y1, x1, ch);
      }
  return y;
}

Tensor upsample2x_grad(const Tensor& dy, const Shape& input_shape) {
  Tensor dx(input_shape);
  for (int n = 0; n < dy.n(); ++n)
    for (int oy = 0; oy < dy.h(); ++oy)
      for (int ox = 0; ox < dy.w(); ++ox) {
        int y0, y1, x0, x1;
        double fy, fx;
        bilinear_source(oy, input_shape.h, dy.h(), y0, y1, fy);
        bilinear_source(ox, input_shape.w, dy.w(), x0, x1, fx);
        for (int ch = 0; ch < dy.c(); ++ch) {
          const double g = dy(n, oy, ox, ch);
          dx(n, y0, x0, ch) += (1 - fy) * (1 - fx) * g;
          dx(n, y0, x1, ch) += (1 - fy) * fx * g;
          dx(n, y1, x0, ch) += fy * (1 - fx) * g;
          dx(n, y1, x1, ch) += fy * fx * g;
        }
      }
  return dx;
}

}  // namespace lesion::reference
