#include "mcgaze/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace mcgaze {

namespace {

cv::Mat to_bgr8(const Image& image) {
  cv::Mat m(image.height, image.width, CV_8UC3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      auto& px = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(y, x, c), 0.0f, 1.0f);
        px[2 - c] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  return m;
}

Image from_bgr8(const cv::Mat& m) {
  Image img = make_image(m.rows, m.cols);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const auto& px = m.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = px[2 - c] / 255.0f;
    }
  return img;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::vector<int> params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imwrite(path.string(), to_bgr8(image), params))
    throw std::runtime_error("failed to write image " + path.string());
}

Image read_png(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingFrameError("frame file not found: " + path.string());
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (m.empty()) throw MissingFrameError("could not decode image " + path.string());
  return from_bgr8(m);
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (auto& v : out.rgb) v = std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f) / 255.0f;
  return out;
}

Image resize_image(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  cv::Mat src(image.height, image.width, CV_32FC3, const_cast<float*>(image.rgb.data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  Image out = make_image(height, width);
  std::copy(dst.ptr<float>(), dst.ptr<float>() + out.rgb.size(), out.rgb.begin());
  return out;
}

}  // namespace mcgaze
