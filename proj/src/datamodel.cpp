#include "mcgaze/datamodel.hpp"

#include <algorithm>
#include <cmath>

namespace mcgaze {

std::string_view clue_name(ClueKind clue) {
  switch (clue) {
    case ClueKind::kHead:
      return "head";
    case ClueKind::kFace:
      return "face";
    case ClueKind::kEye:
      return "eye";
  }
  return "unknown";
}

ClueKind clue_from_name(std::string_view name) {
  for (ClueKind c : kAllClues)
    if (clue_name(c) == name) return c;
  throw SchemaError("unknown clue name '" + std::string(name) + "' (expected head, face or eye)");
}

CornerBox box_center_to_corner(const Box& b) {
  if (!(b.w > 0.0) || !(b.h > 0.0)) {
    throw InvalidBoxError("box has nonpositive size (w=" + std::to_string(b.w) +
                          ", h=" + std::to_string(b.h) + ")");
  }
  auto clamp01 = [](double v) { return std::clamp(v, 0.0, 1.0); };
  return {clamp01(b.cx - 0.5 * b.w), clamp01(b.cy - 0.5 * b.h), clamp01(b.cx + 0.5 * b.w),
          clamp01(b.cy + 0.5 * b.h)};
}

Box box_corner_to_center(const CornerBox& c) {
  return {0.5 * (c.x1 + c.x2), 0.5 * (c.y1 + c.y2), c.x2 - c.x1, c.y2 - c.y1};
}

double GazeVector::norm() const { return std::sqrt(x * x + y * y + z * z); }

GazeVector normalize_gaze(const GazeVector& g) {
  const double n = g.norm();
  if (!(n > 1e-12)) throw DegenerateGazeError("gaze vector norm is zero or non-finite");
  // Unit vectors (to rounding) come back untouched so the map is idempotent.
  if (std::fabs(n - 1.0) <= 1e-15) return g;
  return {g.x / n, g.y / n, g.z / n};
}

GazeVector gaze_from_angles(double yaw, double pitch) {
  return {std::sin(yaw) * std::cos(pitch), std::sin(pitch), -std::cos(yaw) * std::cos(pitch)};
}

Image make_image(int height, int width, float fill) {
  Image img;
  img.height = height;
  img.width = width;
  img.rgb.assign(static_cast<std::size_t>(height) * width * 3, fill);
  return img;
}

void validate_clip(const VideoClip& clip) {
  const int T = clip.length();
  if (T < 1) throw SchemaError("clip has no frames");
  if (clip.frame_indices.size() != clip.frames.size())
    throw SchemaError("frame_indices length does not match frame count");
  for (const auto& f : clip.frames) {
    if (f.height != clip.frames[0].height || f.width != clip.frames[0].width)
      throw SchemaError("frames do not share a common size");
  }
  for (int t = 1; t < T; ++t) {
    if (clip.frame_indices[t] <= clip.frame_indices[t - 1])
      throw SchemaError("frame_indices must be strictly increasing");
  }
  if (!clip.annotations) return;
  const auto& a = *clip.annotations;
  if (static_cast<int>(a.gaze.size()) != T) throw SchemaError("gaze annotation length != frame count");
  for (const auto& g : a.gaze) {
    if (std::fabs(g.norm() - 1.0) > 1e-6) throw SchemaError("gaze annotation is not unit norm");
  }
  if (a.boxes.size() != 3 || a.existence.size() != 3)
    throw SchemaError("annotations must carry exactly the clues head, face, eye");
  for (ClueKind c : kAllClues) {
    auto b = a.boxes.find(c);
    auto e = a.existence.find(c);
    if (b == a.boxes.end() || e == a.existence.end())
      throw SchemaError("missing annotations for clue " + std::string(clue_name(c)));
    if (static_cast<int>(b->second.size()) != T || static_cast<int>(e->second.size()) != T)
      throw SchemaError("annotation length mismatch for clue " + std::string(clue_name(c)));
  }
}

VideoClip slice_clip(const VideoClip& clip, int begin, int end) {
  if (begin < 0 || end > clip.length() || begin >= end) throw std::out_of_range("slice_clip: bad range");
  VideoClip out;
  out.frames.assign(clip.frames.begin() + begin, clip.frames.begin() + end);
  out.frame_indices.assign(clip.frame_indices.begin() + begin, clip.frame_indices.begin() + end);
  if (clip.annotations) {
    ClipAnnotations a;
    const auto& src = *clip.annotations;
    a.gaze.assign(src.gaze.begin() + begin, src.gaze.begin() + end);
    for (const auto& [k, v] : src.boxes) a.boxes[k] = std::vector<Box>(v.begin() + begin, v.begin() + end);
    for (const auto& [k, v] : src.existence)
      a.existence[k] = std::vector<bool>(v.begin() + begin, v.begin() + end);
    out.annotations = std::move(a);
  }
  return out;
}

}  // namespace mcgaze
