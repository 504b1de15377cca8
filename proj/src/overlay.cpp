#include "lesion/overlay.hpp"

namespace lesion {

Tensor mask_boundary(const Tensor& mask) {
  require(mask.n() == 1 && mask.c() == 1, "boundary needs a (1,h,w,1) mask");
  const int H = mask.h(), W = mask.w();
  auto on = [&](int y, int x) { return y >= 0 && y < H && x >= 0 && x < W && mask(0, y, x, 0) >= 0.5; };
  Tensor out(mask.shape());
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      if (on(y, x) && !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1))) out(0, y, x, 0) = 1.0;
  return out;
}

Tensor render_overlay(const Tensor& image_rgb8, const Tensor& truth, const Tensor& pred) {
  require(image_rgb8.n() == 1 && image_rgb8.c() == 3, "overlay needs a (1,h,w,3) image");
  for (const Tensor* m : {&truth, &pred})
    require(m->h() == image_rgb8.h() && m->w() == image_rgb8.w(),
            "mask " + m->shape().str() + " does not match image " + image_rgb8.shape().str());
  const Tensor gb = mask_boundary(truth), pb = mask_boundary(pred);
  Tensor out = image_rgb8;
  for (int y = 0; y < out.h(); ++y)
    for (int x = 0; x < out.w(); ++x) {
      const bool g = gb(0, y, x, 0) != 0.0, p = pb(0, y, x, 0) != 0.0;
      if (!g && !p) continue;
      out(0, y, x, 0) = 0.0;
      out(0, y, x, 1) = p ? 255.0 : 0.0;
      out(0, y, x, 2) = g ? 255.0 : 0.0;
    }
  return out;
}

}  // namespace lesion
