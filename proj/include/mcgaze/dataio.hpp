#pragma once

// Manifest schema (UTF-8 JSON):
//
//   {
//     "version": "1.0",
//     "metadata": { ... free-form ... },
//     "clips": [
//       { "id": "clip_0000",
//         "frames": ["frames/clip_0000/frame_0000.png", ...],   // relative to the manifest
//         "gaze": [[x,y,z], ...],                               // unit vectors, one per frame
//         "boxes": {"head": [[cx,cy,w,h], ...], "face": ..., "eye": ...},
//         "existence": {"head": [true, ...], "face": ..., "eye": ...} }
//     ]
//   }
//
// Converting another dataset (e.g. Gaze360) means emitting this file: frames
// as pre-extracted images, gaze in camera coordinates with the camera looking
// along +z, and head/face/eye boxes plus existence flags from whatever
// external detector the adapter author trusts. Boxes for frames whose clue
// does not exist may hold any value.

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "mcgaze/config.hpp"
#include "mcgaze/datamodel.hpp"

namespace mcgaze {

inline constexpr const char* kManifestVersion = "1.0";

struct ClipEntry {
  std::string id;
  std::vector<std::string> frames;  // as written in the manifest (relative)
  std::vector<GazeVector> gaze;
  std::map<ClueKind, std::vector<Box>> boxes;
  std::map<ClueKind, std::vector<bool>> existence;

  int length() const { return static_cast<int>(frames.size()); }
  ClipAnnotations annotations() const;
  bool operator==(const ClipEntry&) const = default;
};

struct Manifest {
  std::string version = kManifestVersion;
  std::vector<ClipEntry> clips;
  json metadata = json::object();
  std::filesystem::path base_dir;  // directory the frame paths are relative to

  const ClipEntry& clip(const std::string& id) const;
};

/// Parses and validates. Throws SchemaError naming the clip and field, or
/// MissingFrameError when a referenced frame file is absent.
Manifest load_manifest(const std::filesystem::path& path);
Manifest manifest_from_json(const json& j, const std::filesystem::path& base_dir, bool check_files = true);
json manifest_to_json(const Manifest& m);
void save_manifest(const Manifest& m, const std::filesystem::path& path);

/// Reads the frames of one manifest clip; resizes when image_size > 0.
VideoClip load_clip(const Manifest& m, std::size_t index, int image_size = 0);
std::vector<VideoClip> load_all_clips(const Manifest& m, int image_size = 0);

struct TrainingWindow {
  std::size_t clip = 0;
  int start = 0;
};

/// Every window of exactly clip_len frames, in source order.
std::vector<TrainingWindow> enumerate_training_windows(const std::vector<int>& clip_lengths, int clip_len);

/// Endless stream of fixed-length training windows. Each epoch visits every
/// window once in an order shuffled from (seed, epoch); sources shorter than
/// clip_len contribute nothing.
class TrainingClipStream {
 public:
  TrainingClipStream(std::vector<VideoClip> sources, int clip_len, std::uint64_t seed);

  std::size_t epoch_size() const { return windows_.size(); }
  bool empty() const { return windows_.empty(); }
  /// Throws std::logic_error when the stream is empty.
  VideoClip next();
  const std::vector<TrainingWindow>& epoch_order() const { return order_; }
  std::size_t position() const { return epoch_ * windows_.size() + cursor_; }
  /// Window returned by the latest next().
  const TrainingWindow& last_window() const { return last_; }
  /// Skips ahead so the next window is the one at absolute position `pos`.
  void seek(std::size_t pos);

 private:
  void reshuffle();

  std::vector<VideoClip> sources_;
  int clip_len_;
  std::uint64_t seed_;
  std::vector<TrainingWindow> windows_;
  std::vector<TrainingWindow> order_;
  std::size_t epoch_ = 0;
  std::size_t cursor_ = 0;
  TrainingWindow last_;
};

TrainingClipStream sample_training_clips(const Manifest& m, int clip_len, std::uint64_t seed, int image_size = 0);

/// Sliding windows [start, end) covering [0, n_frames); the last window is
/// shifted left to end at n_frames. Strides above clip_len are capped at
/// clip_len so no frame is skipped. Videos shorter than clip_len get one
/// window [0, n_frames).
std::vector<std::pair<int, int>> enumerate_inference_windows(int n_frames, int clip_len, int stride);

}  // namespace mcgaze
