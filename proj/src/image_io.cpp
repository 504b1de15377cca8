#include "lesion/image_io.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace lesion {
namespace {

cv::Mat decode(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) throw Error("cannot read '" + path.string() + "': no such file");
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw Error("cannot decode image '" + path.string() + "'");
  if (m.depth() != CV_8U) {
    cv::Mat converted;
    m.convertTo(converted, CV_8U, m.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
    m = converted;
  }
  return m;
}

}  // namespace

Tensor read_rgb(const std::filesystem::path& path) {
  const cv::Mat m = decode(path, cv::IMREAD_COLOR);
  Tensor t({1, m.rows, m.cols, 3});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      t(0, y, x, 0) = row[x][2];
      t(0, y, x, 1) = row[x][1];
      t(0, y, x, 2) = row[x][0];
    }
  }
  return t;
}

Tensor read_gray(const std::filesystem::path& path) {
  const cv::Mat m = decode(path, cv::IMREAD_GRAYSCALE);
  Tensor t({1, m.rows, m.cols, 1});
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) t(0, y, x, 0) = row[x];
  }
  return t;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  require(image.n() == 1 && (image.c() == 1 || image.c() == 3),
          "write_png expects (1,h,w,1|3), got " + image.shape().str());
  auto to8 = [](double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  };
  cv::Mat m(image.h(), image.w(), image.c() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x) {
      if (image.c() == 3) {
        m.at<cv::Vec3b>(y, x) = {to8(image(0, y, x, 2)), to8(image(0, y, x, 1)), to8(image(0, y, x, 0))};
      } else {
        m.at<std::uint8_t>(y, x) = to8(image(0, y, x, 0));
      }
    }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw Error("cannot write image '" + path.string() + "'");
}

}  // namespace lesion
