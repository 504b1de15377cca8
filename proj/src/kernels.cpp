#include "lesion/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace lesion {

Shape ConvGeometry::output_shape(const Shape& in) const {
  return {in.n, strided_extent(in.h, stride), strided_extent(in.w, stride), out_channels};
}

namespace kernels {
namespace {

void check_conv_input(const Tensor& x, const ConvGeometry& g) {
  require(x.c() == g.in_channels, "conv input has " + std::to_string(x.c()) +
                                      " channels, expected " + std::to_string(g.in_channels));
  require(g.stride == 1 || g.stride == 2, "conv stride must be 1 or 2");
  require(g.kernel >= 1 && g.kernel % 2 == 1, "conv kernel must be odd");
}

struct AxisSample {
  int lo;
  int hi;
  double frac;
};

std::vector<AxisSample> bilinear_axis(int in, int out) {
  std::vector<AxisSample> s(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    if (lo > in - 1) lo = in - 1;
    const int hi = std::min(lo + 1, in - 1);
    s[static_cast<std::size_t>(o)] = {lo, hi, src - lo};
  }
  return s;
}

}  // namespace

Tensor conv2d(const Tensor& x, std::span<const double> weight, std::span<const double> bias,
              const ConvGeometry& g) {
  check_conv_input(x, g);
  require(weight.size() == g.weight_count(), "conv weight size mismatch");
  require(bias.empty() || bias.size() == static_cast<std::size_t>(g.out_channels),
          "conv bias size mismatch");
  Tensor y(g.output_shape(x.shape()));
  const int k = g.kernel, s = g.stride, pad = g.pad();
  const int cin = g.in_channels, cout = g.out_channels;
  const int N = y.n(), OH = y.h(), OW = y.w(), H = x.h(), W = x.w();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        double* out = y.data() + y.index(n, oy, ox, 0);
        if (!bias.empty()) std::copy(bias.begin(), bias.end(), out);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s + kx - pad;
            if (ix < 0 || ix >= W) continue;
            const double* in = x.data() + x.index(n, iy, ix, 0);
            const double* wt = weight.data() + static_cast<std::size_t>(ky * k + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double v = in[ci];
              const double* wrow = wt + static_cast<std::size_t>(ci) * cout;
#pragma omp simd
              for (int co = 0; co < cout; ++co) out[co] += v * wrow[co];
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor conv2d_grad_input(const Tensor& dy, std::span<const double> weight, const ConvGeometry& g,
                         const Shape& input_shape) {
  Tensor dx(input_shape);
  const int k = g.kernel, s = g.stride, pad = g.pad();
  const int cin = g.in_channels, cout = g.out_channels;
  const int N = input_shape.n, H = input_shape.h, W = input_shape.w;
  const int OH = dy.h(), OW = dy.w();

  // Gather form: each input pixel sums over the output taps that read it.
#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int iy = 0; iy < H; ++iy) {
      for (int ix = 0; ix < W; ++ix) {
        double* gin = dx.data() + dx.index(n, iy, ix, 0);
        for (int ky = 0; ky < k; ++ky) {
          const int ty = iy + pad - ky;
          if (ty < 0 || ty % s != 0) continue;
          const int oy = ty / s;
          if (oy >= OH) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int tx = ix + pad - kx;
            if (tx < 0 || tx % s != 0) continue;
            const int ox = tx / s;
            if (ox >= OW) continue;
            const double* go = dy.data() + dy.index(n, oy, ox, 0);
            const double* wt = weight.data() + static_cast<std::size_t>(ky * k + kx) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              const double* wrow = wt + static_cast<std::size_t>(ci) * cout;
              double acc = 0.0;
#pragma omp simd reduction(+ : acc)
              for (int co = 0; co < cout; ++co) acc += go[co] * wrow[co];
              gin[ci] += acc;
            }
          }
        }
      }
    }
  }
  return dx;
}

void conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                        std::span<double> dweight) {
  require(dweight.size() == g.weight_count(), "conv weight-gradient size mismatch");
  const int k = g.kernel, s = g.stride, pad = g.pad();
  const int cin = g.in_channels, cout = g.out_channels;
  const int N = dy.n(), OH = dy.h(), OW = dy.w(), H = x.h(), W = x.w();
  constexpr int kBlock = 16;
  const int cblocks = (cin + kBlock - 1) / kBlock;

  // Each (tap, channel block) owns a disjoint slice of dweight; summation order
  // over pixels is fixed, so results do not depend on the thread count.
#pragma omp parallel for collapse(2) schedule(static)
  for (int tap = 0; tap < k * k; ++tap) {
    for (int cb = 0; cb < cblocks; ++cb) {
      const int ky = tap / k, kx = tap % k;
      const int c0 = cb * kBlock, c1 = std::min(cin, c0 + kBlock);
      double* wt = dweight.data() + static_cast<std::size_t>(tap) * cin * cout;
      for (int n = 0; n < N; ++n) {
        for (int oy = 0; oy < OH; ++oy) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < OW; ++ox) {
            const int ix = ox * s + kx - pad;
            if (ix < 0 || ix >= W) continue;
            const double* in = x.data() + x.index(n, iy, ix, 0);
            const double* go = dy.data() + dy.index(n, oy, ox, 0);
            for (int ci = c0; ci < c1; ++ci) {
              const double v = in[ci];
              double* wrow = wt + static_cast<std::size_t>(ci) * cout;
#pragma omp simd
              for (int co = 0; co < cout; ++co) wrow[co] += v * go[co];
            }
          }
        }
      }
    }
  }
}

void bias_grad(const Tensor& dy, std::span<double> dbias) {
  require(dbias.size() == static_cast<std::size_t>(dy.c()), "bias-gradient size mismatch");
  const std::size_t pixels = dy.size() / static_cast<std::size_t>(dy.c());
  const int c = dy.c();
  for (std::size_t p = 0; p < pixels; ++p) {
    const double* go = dy.data() + p * c;
    for (int ch = 0; ch < c; ++ch) dbias[ch] += go[ch];
  }
}

Tensor depthwise_conv2d(const Tensor& x, std::span<const double> weight, const ConvGeometry& g) {
  check_conv_input(x, g);
  require(weight.size() == g.depthwise_weight_count(), "depthwise weight size mismatch");
  const int k = g.kernel, s = g.stride, pad = g.pad(), c = g.in_channels;
  Tensor y({x.n(), strided_extent(x.h(), s), strided_extent(x.w(), s), c});
  const int N = y.n(), OH = y.h(), OW = y.w(), H = x.h(), W = x.w();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        double* out = y.data() + y.index(n, oy, ox, 0);
        for (int ky = 0; ky < k; ++ky) {
          const int iy = oy * s + ky - pad;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ox * s + kx - pad;
            if (ix < 0 || ix >= W) continue;
            const double* in = x.data() + x.index(n, iy, ix, 0);
            const double* wt = weight.data() + static_cast<std::size_t>(ky * k + kx) * c;
#pragma omp simd
            for (int ch = 0; ch < c; ++ch) out[ch] += in[ch] * wt[ch];
          }
        }
      }
    }
  }
  return y;
}

Tensor depthwise_conv2d_grad_input(const Tensor& dy, std::span<const double> weight,
                                   const ConvGeometry& g, const Shape& input_shape) {
  Tensor dx(input_shape);
  const int k = g.kernel, s = g.stride, pad = g.pad(), c = g.in_channels;
  const int N = input_shape.n, H = input_shape.h, W = input_shape.w;
  const int OH = dy.h(), OW = dy.w();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int iy = 0; iy < H; ++iy) {
      for (int ix = 0; ix < W; ++ix) {
        double* gin = dx.data() + dx.index(n, iy, ix, 0);
        for (int ky = 0; ky < k; ++ky) {
          const int ty = iy + pad - ky;
          if (ty < 0 || ty % s != 0) continue;
          const int oy = ty / s;
          if (oy >= OH) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int tx = ix + pad - kx;
            if (tx < 0 || tx % s != 0) continue;
            const int ox = tx / s;
            if (ox >= OW) continue;
            const double* go = dy.data() + dy.index(n, oy, ox, 0);
            const double* wt = weight.data() + static_cast<std::size_t>(ky * k + kx) * c;
#pragma omp simd
            for (int ch = 0; ch < c; ++ch) gin[ch] += go[ch] * wt[ch];
          }
        }
      }
    }
  }
  return dx;
}

void depthwise_conv2d_grad_weight(const Tensor& x, const Tensor& dy, const ConvGeometry& g,
                                  std::span<double> dweight) {
  require(dweight.size() == g.depthwise_weight_count(), "depthwise weight-gradient size mismatch");
  const int k = g.kernel, s = g.stride, pad = g.pad(), c = g.in_channels;
  const int N = dy.n(), OH = dy.h(), OW = dy.w(), H = x.h(), W = x.w();

#pragma omp parallel for schedule(static)
  for (int tap = 0; tap < k * k; ++tap) {
    const int ky = tap / k, kx = tap % k;
    double* wt = dweight.data() + static_cast<std::size_t>(tap) * c;
    for (int n = 0; n < N; ++n) {
      for (int oy = 0; oy < OH; ++oy) {
        const int iy = oy * s + ky - pad;
        if (iy < 0 || iy >= H) continue;
        for (int ox = 0; ox < OW; ++ox) {
          const int ix = ox * s + kx - pad;
          if (ix < 0 || ix >= W) continue;
          const double* in = x.data() + x.index(n, iy, ix, 0);
          const double* go = dy.data() + dy.index(n, oy, ox, 0);
#pragma omp simd
          for (int ch = 0; ch < c; ++ch) wt[ch] += in[ch] * go[ch];
        }
      }
    }
  }
}

Tensor max_pool2(const Tensor& x, std::vector<std::size_t>& argmax) {
  Tensor y({x.n(), strided_extent(x.h(), 2), strided_extent(x.w(), 2), x.c()});
  argmax.assign(y.size(), 0);
  const int N = y.n(), OH = y.h(), OW = y.w(), C = y.c(), H = x.h(), W = x.w();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        for (int ch = 0; ch < C; ++ch) {
          std::size_t best = x.index(n, 2 * oy, 2 * ox, ch);
          for (int dy = 0; dy < 2; ++dy) {
            const int iy = 2 * oy + dy;
            if (iy >= H) continue;
            for (int dx = 0; dx < 2; ++dx) {
              const int ix = 2 * ox + dx;
              if (ix >= W) continue;
              const std::size_t idx = x.index(n, iy, ix, ch);
              if (x[idx] > x[best] || std::isnan(x[idx])) best = idx;  // NaN wins so it is not hidden
            }
          }
          const std::size_t o = y.index(n, oy, ox, ch);
          y[o] = x[best];
          argmax[o] = best;
        }
      }
    }
  }
  return y;
}

Tensor max_pool2_grad(const Tensor& dy, std::span<const std::size_t> argmax,
                      const Shape& input_shape) {
  require(argmax.size() == dy.size(), "max_pool2_grad: argmax size mismatch");
  Tensor dx(input_shape);
  // Windows are disjoint, so each input element receives at most one write.
  const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(dy.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t o = 0; o < total; ++o) dx[argmax[o]] += dy[static_cast<std::size_t>(o)];
  return dx;
}

Tensor upsample2x(const Tensor& x) { return resize_bilinear(x, 2 * x.h(), 2 * x.w()); }

Tensor upsample2x_grad(const Tensor& dy, const Shape& input_shape) {
  require(dy.h() == 2 * input_shape.h && dy.w() == 2 * input_shape.w,
          "upsample2x_grad: shape mismatch");
  Tensor dx(input_shape);
  const auto ys = bilinear_axis(input_shape.h, dy.h());
  const auto xs = bilinear_axis(input_shape.w, dy.w());
  const int N = dy.n(), OH = dy.h(), OW = dy.w(), C = dy.c();

  // Scatter within one sample; samples are independent.
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < OH; ++oy) {
      const AxisSample sy = ys[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < OW; ++ox) {
        const AxisSample sx = xs[static_cast<std::size_t>(ox)];
        const double w00 = (1 - sy.frac) * (1 - sx.frac), w01 = (1 - sy.frac) * sx.frac;
        const double w10 = sy.frac * (1 - sx.frac), w11 = sy.frac * sx.frac;
        const double* go = dy.data() + dy.index(n, oy, ox, 0);
        double* p00 = dx.data() + dx.index(n, sy.lo, sx.lo, 0);
        double* p01 = dx.data() + dx.index(n, sy.lo, sx.hi, 0);
        double* p10 = dx.data() + dx.index(n, sy.hi, sx.lo, 0);
        double* p11 = dx.data() + dx.index(n, sy.hi, sx.hi, 0);
        for (int ch = 0; ch < C; ++ch) {
          p00[ch] += w00 * go[ch];
          p01[ch] += w01 * go[ch];
          p10[ch] += w10 * go[ch];
          p11[ch] += w11 * go[ch];
        }
      }
    }
  }
  return dx;
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize target must be positive");
  require(x.h() > 0 && x.w() > 0, "resize source is empty");
  Tensor y({x.n(), out_h, out_w, x.c()});
  const auto ys = bilinear_axis(x.h(), out_h);
  const auto xs = bilinear_axis(x.w(), out_w);
  const int N = x.n(), C = x.c();

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      const AxisSample sy = ys[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < out_w; ++ox) {
        const AxisSample sx = xs[static_cast<std::size_t>(ox)];
        const double* p00 = x.data() + x.index(n, sy.lo, sx.lo, 0);
        const double* p01 = x.data() + x.index(n, sy.lo, sx.hi, 0);
        const double* p10 = x.data() + x.index(n, sy.hi, sx.lo, 0);
        const double* p11 = x.data() + x.index(n, sy.hi, sx.hi, 0);
        double* out = y.data() + y.index(n, oy, ox, 0);
        for (int ch = 0; ch < C; ++ch) {
          const double top = p00[ch] + (p01[ch] - p00[ch]) * sx.frac;
          const double bot = p10[ch] + (p11[ch] - p10[ch]) * sx.frac;
          out[ch] = top + (bot - top) * sy.frac;
        }
      }
    }
  }
  return y;
}

Tensor resize_nearest(const Tensor& x, int out_h, int out_w) {
  require(out_h > 0 && out_w > 0, "resize target must be positive");
  require(x.h() > 0 && x.w() > 0, "resize source is empty");
  Tensor y({x.n(), out_h, out_w, x.c()});
  const int N = x.n(), C = x.c(), H = x.h(), W = x.w();
  const double sy = static_cast<double>(H) / out_h, sx = static_cast<double>(W) / out_w;

#pragma omp parallel for collapse(2) schedule(static)
  for (int n = 0; n < N; ++n) {
    for (int oy = 0; oy < out_h; ++oy) {
      const int iy = std::min(H - 1, static_cast<int>(std::floor((oy + 0.5) * sy)));
      for (int ox = 0; ox < out_w; ++ox) {
        const int ix = std::min(W - 1, static_cast<int>(std::floor((ox + 0.5) * sx)));
        std::copy_n(x.data() + x.index(n, iy, ix, 0), C, y.data() + y.index(n, oy, ox, 0));
      }
    }
  }
  return y;
}

}  // namespace kernels
}  // namespace lesion
