#pragma once

#include <cstdint>
#include <filesystem>
#include <numbers>
#include <vector>

#include "mcgaze/config.hpp"
#include "mcgaze/datamodel.hpp"

namespace mcgaze {

struct SynthConfig {
  std::uint64_t seed = 0;
  int frames = 7;
  int image_size = 64;
  double yaw_range = 0.8;    // radians, gaze yaw drawn from [-range, range]
  double pitch_range = 0.4;  // radians
  double walk_smoothness = 0.8;
  double occlusion_yaw = std::numbers::pi / 2;
  double head_follow = 0.6;  // fraction of gaze rotation carried by the head

  void validate() const;
};

void to_json(json& j, const SynthConfig& v);
void from_json(const json& j, SynthConfig& v);

/// Pixel-space layout of one rendered frame.
struct SynthFrameGeometry {
  double yaw = 0.0;
  double pitch = 0.0;
  GazeVector gaze;
  bool face_visible = true;
  double head_cx = 0, head_cy = 0, head_r = 0;
  double face_cx = 0, face_cy = 0, face_a = 0, face_b = 0;
  double eye_r = 0;           // eyeball radius
  double pupil_r = 0;
  double pupil_travel = 0;    // pupil offset = pupil_travel * (gaze.x, gaze.y)
  double eye_cx[2] = {0, 0};  // left, right eyeball centers
  double eye_cy = 0;
  Box head_box, face_box, eye_box;
};

/// Deterministic layout of every frame of the clip described by cfg.
std::vector<SynthFrameGeometry> synth_geometry(const SynthConfig& cfg);

/// Renders a labeled clip. Same cfg -> bit-identical clip. Pixel values are
/// 8-bit quantized so the clip equals its PNG round trip.
VideoClip generate_clip(const SynthConfig& cfg);

/// Per-clip seed derived from (dataset seed, clip index).
std::uint64_t derive_clip_seed(std::uint64_t seed, std::size_t index);

/// Writes frames under out_dir/frames/ and out_dir/manifest.json; returns the
/// manifest path.
std::filesystem::path generate_dataset(const SynthConfig& cfg, int n_clips, const std::filesystem::path& out_dir);

}  // namespace mcgaze
