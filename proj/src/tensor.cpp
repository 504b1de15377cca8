#include "lesion/tensor.hpp"

#include <algorithm>
#include <numeric>

namespace lesion {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(h) + "," + std::to_string(w) + "," +
         std::to_string(c) + ")";
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {
  require(shape.n >= 0 && shape.h >= 0 && shape.w >= 0 && shape.c >= 0, "negative tensor extent");
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

Tensor Tensor::sample(int i) const {
  require(i >= 0 && i < shape_.n, "sample index out of range");
  Tensor out({1, shape_.h, shape_.w, shape_.c});
  const std::size_t stride = out.size();
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(i * stride), stride, out.data_.begin());
  return out;
}

void Tensor::set_sample(int i, const Tensor& src) {
  require(i >= 0 && i < shape_.n, "sample index out of range");
  require(src.n() == 1 && src.h() == shape_.h && src.w() == shape_.w && src.c() == shape_.c,
          "set_sample shape mismatch: " + src.shape().str() + " into " + shape_.str());
  std::copy(src.data_.begin(), src.data_.end(),
            data_.begin() + static_cast<std::ptrdiff_t>(i * src.size()));
}

double Tensor::min() const { return data_.empty() ? 0.0 : *std::min_element(data_.begin(), data_.end()); }
double Tensor::max() const { return data_.empty() ? 0.0 : *std::max_element(data_.begin(), data_.end()); }
double Tensor::sum() const { return std::accumulate(data_.begin(), data_.end(), 0.0); }

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.n() == b.n() && a.h() == b.h() && a.w() == b.w(),
          "concat shape mismatch: " + a.shape().str() + " vs " + b.shape().str());
  Tensor out({a.n(), a.h(), a.w(), a.c() + b.c()});
  const std::size_t pixels = static_cast<std::size_t>(a.n()) * a.h() * a.w();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * a.c(), a.c(), out.data() + p * out.c());
    std::copy_n(b.data() + p * b.c(), b.c(), out.data() + p * out.c() + a.c());
  }
  return out;
}

void split_channels(const Tensor& src, int ca, Tensor& a, Tensor& b) {
  require(ca >= 0 && ca <= src.c(), "split_channels: bad split point");
  a = Tensor({src.n(), src.h(), src.w(), ca});
  b = Tensor({src.n(), src.h(), src.w(), src.c() - ca});
  const std::size_t pixels = static_cast<std::size_t>(src.n()) * src.h() * src.w();
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(src.data() + p * src.c(), ca, a.data() + p * a.c());
    std::copy_n(src.data() + p * src.c() + ca, b.c(), b.data() + p * b.c());
  }
}

void require(bool cond, const std::string& message) {
  if (!cond) throw Error(message);
}

}  // namespace lesion
