#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lesion {

/// Base exception for every recoverable failure in the pipeline.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Rank-4 NHWC shape.
struct Shape {
  int n = 0;
  int h = 0;
  int w = 0;
  int c = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * h * w * c;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NHWC tensor of doubles. Value semantics.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  int c() const { return shape_.c; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  std::size_t index(int n, int y, int x, int ch) const {
    return ((static_cast<std::size_t>(n) * shape_.h + y) * shape_.w + x) * shape_.c + ch;
  }
  double& operator()(int n, int y, int x, int ch) { return data_[index(n, y, x, ch)]; }
  double operator()(int n, int y, int x, int ch) const { return data_[index(n, y, x, ch)]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);

  /// Copy of batch item `i` as a batch of one.
  Tensor sample(int i) const;
  /// Overwrite batch item `i` with `src` (a batch of one with matching h, w, c).
  void set_sample(int i, const Tensor& src);

  double min() const;
  double max() const;
  double sum() const;

private:
  Shape shape_;
  std::vector<double> data_;
};

/// Concatenate along channels; both inputs must agree on n, h, w.
Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels: split channel range [0, ca) and [ca, c).
void split_channels(const Tensor& src, int ca, Tensor& a, Tensor& b);

void require(bool cond, const std::string& message);

}  // namespace lesion
