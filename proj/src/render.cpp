#include "mcgaze/render.hpp"

#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>

namespace mcgaze {

Image draw_gaze_arrows(const Image& frame, const Box& head, const std::optional<GazeVector>& pred,
                       const std::optional<GazeVector>& gt, int min_size) {
  const int scale = std::max(1, (min_size + frame.width - 1) / std::max(1, frame.width));
  const int H = frame.height * scale;
  const int W = frame.width * scale;
  cv::Mat canvas(H, W, CV_32FC3);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) canvas.at<cv::Vec3f>(y, x)[c] = frame.at(y / scale, x / scale, c);

  const cv::Point origin(static_cast<int>(std::lround(head.cx * W)), static_cast<int>(std::lround(head.cy * H)));
  const double length = 0.45 * std::min(W, H);
  const int thickness = std::max(2, W / 128);
  auto arrow = [&](const GazeVector& g, const cv::Scalar& rgb) {
    // Image-plane projection of the gaze direction.
    const cv::Point tip(origin.x + static_cast<int>(std::lround(g.x * length)),
                        origin.y + static_cast<int>(std::lround(g.y * length)));
    cv::arrowedLine(canvas, origin, tip, rgb, thickness, cv::LINE_AA, 0, 0.2);
  };
  // canvas channels are RGB
  if (gt) arrow(*gt, cv::Scalar(1.0, 0.0, 0.0));
  if (pred) arrow(*pred, cv::Scalar(0.0, 1.0, 1.0));

  Image out = make_image(H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = canvas.at<cv::Vec3f>(y, x)[c];
  return out;
}

}  // namespace mcgaze
