#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace mcgaze {

// ---- error taxonomy shared across modules ----

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidBoxError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DegenerateGazeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
/// Manifest or file content does not follow its documented schema.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingFrameError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Prediction file does not cover every annotated frame.
struct CoverageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- clues ----

enum class ClueKind : int { kHead = 0, kFace = 1, kEye = 2 };

/// Fixed concatenation order used by fusion and every per-clue container.
inline constexpr std::array<ClueKind, 3> kAllClues = {ClueKind::kHead, ClueKind::kFace, ClueKind::kEye};

std::string_view clue_name(ClueKind clue);
ClueKind clue_from_name(std::string_view name);

// ---- geometry ----

/// Center-form box in normalized image coordinates.
struct Box {
  double cx = 0.5;
  double cy = 0.5;
  double w = 1.0;
  double h = 1.0;

  bool operator==(const Box&) const = default;
};

struct CornerBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 1.0;
  double y2 = 1.0;

  bool operator==(const CornerBox&) const = default;
};

/// Throws InvalidBoxError when w or h is not strictly positive.
CornerBox box_center_to_corner(const Box& b);
Box box_corner_to_center(const CornerBox& c);

struct GazeVector {
  double x = 0.0;
  double y = 0.0;
  double z = -1.0;

  double norm() const;
  bool operator==(const GazeVector&) const = default;
};

/// Throws DegenerateGazeError for norms at or below 1e-12.
GazeVector normalize_gaze(const GazeVector& g);

/// Unit gaze from yaw (positive: subject looks toward image +x) and pitch
/// (positive: looks toward image +y, i.e. down). Camera looks along +z, so a
/// camera-facing gaze is (0,0,-1).
GazeVector gaze_from_angles(double yaw, double pitch);

// ---- images and clips ----

/// H x W x 3 interleaved RGB, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> rgb;

  float& at(int y, int x, int c) { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return rgb[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  bool operator==(const Image&) const = default;
};

Image make_image(int height, int width, float fill = 0.0f);

struct ClipAnnotations {
  std::vector<GazeVector> gaze;
  std::map<ClueKind, std::vector<Box>> boxes;
  std::map<ClueKind, std::vector<bool>> existence;

  bool operator==(const ClipAnnotations&) const = default;
};

struct VideoClip {
  std::vector<Image> frames;
  std::vector<int> frame_indices;
  std::optional<ClipAnnotations> annotations;

  int length() const { return static_cast<int>(frames.size()); }
  bool operator==(const VideoClip&) const = default;
};

/// Checks the VideoClip and ClipAnnotations invariants; throws SchemaError.
void validate_clip(const VideoClip& clip);

/// Sub-clip [begin, end) with annotations sliced accordingly.
VideoClip slice_clip(const VideoClip& clip, int begin, int end);

}  // namespace mcgaze
