#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mcgaze/config.hpp"
#include "mcgaze/dataio.hpp"
#include "mcgaze/datamodel.hpp"

namespace mcgaze {

/// arccos of the cosine similarity, in degrees. Throws DegenerateGazeError on
/// a zero-norm argument.
double angular_error_deg(const GazeVector& pred, const GazeVector& gt);

/// Ground truth points toward the camera (negative z).
bool in_front_180(const GazeVector& gt);
/// Ground truth within `max_deg` of the direction straight into the camera.
bool in_front_facing(const GazeVector& gt, double max_deg);

/// One line of a prediction file: {"clip_id", "frame_index", "gaze": [x,y,z]}.
struct PredictionRecord {
  std::string clip_id;
  int frame_index = 0;
  GazeVector gaze;

  bool operator==(const PredictionRecord&) const = default;
};

json predictions_to_json(const std::vector<PredictionRecord>& records);
std::vector<PredictionRecord> predictions_from_json(const json& j);
void save_predictions(const std::vector<PredictionRecord>& records, const std::filesystem::path& path);
/// Throws SchemaError on malformed content.
std::vector<PredictionRecord> load_predictions(const std::filesystem::path& path);

struct FrameError {
  std::string clip_id;
  int frame_index = 0;
  double error_deg = 0.0;
  bool detectable_face = false;
  bool front_180 = false;
  bool front_facing = false;
};

struct SplitStats {
  double mean_deg = 0.0;  // NaN when the split is empty
  int count = 0;
};

struct EvalReport {
  SplitStats all;
  SplitStats detectable_faces;
  SplitStats front_180;
  SplitStats front_facing;
  std::vector<FrameError> frames;

  json to_json() const;
  /// Fixed-width human-readable summary.
  std::string table() const;
};

/// Scores every annotated frame of the manifest. Throws CoverageError listing
/// the "clip_id:frame" keys that have no prediction, SchemaError on duplicates.
/// Predictions for clips outside the manifest are ignored.
EvalReport evaluate(const std::vector<PredictionRecord>& predictions, const Manifest& manifest,
                    const SplitConfig& split);
EvalReport evaluate(const std::filesystem::path& prediction_file, const Manifest& manifest, const SplitConfig& split);

}  // namespace mcgaze
