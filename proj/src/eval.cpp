#include "mcgaze/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>

namespace mcgaze {

namespace fs = std::filesystem;

double angular_error_deg(const GazeVector& pred, const GazeVector& gt) {
  const double np = pred.norm();
  const double ng = gt.norm();
  if (!(np > 1e-12) || !(ng > 1e-12)) throw DegenerateGazeError("angular_error_deg: zero-norm gaze vector");
  const double cos = (pred.x * gt.x + pred.y * gt.y + pred.z * gt.z) / (np * ng);
  return std::acos(std::clamp(cos, -1.0, 1.0)) * 180.0 / std::numbers::pi;
}

bool in_front_180(const GazeVector& gt) { return gt.z < 0.0; }

bool in_front_facing(const GazeVector& gt, double max_deg) {
  return angular_error_deg(gt, GazeVector{0.0, 0.0, -1.0}) < max_deg;
}

json predictions_to_json(const std::vector<PredictionRecord>& records) {
  json out = json::array();
  for (const auto& r : records)
    out.push_back({{"clip_id", r.clip_id}, {"frame_index", r.frame_index}, {"gaze", {r.gaze.x, r.gaze.y, r.gaze.z}}});
  return out;
}

std::vector<PredictionRecord> predictions_from_json(const json& j) {
  if (!j.is_array()) throw SchemaError("prediction file must hold a JSON list");
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const json& e = j[i];
    const std::string where = "prediction #" + std::to_string(i);
    if (!e.is_object()) throw SchemaError(where + " is not an object");
    for (const auto& [k, _] : e.items())
      if (k != "clip_id" && k != "frame_index" && k != "gaze") throw SchemaError(where + ": unknown key '" + k + "'");
    PredictionRecord r;
    if (!e.contains("clip_id") || !e["clip_id"].is_string()) throw SchemaError(where + ": 'clip_id' must be a string");
    if (!e.contains("frame_index") || !e["frame_index"].is_number_integer())
      throw SchemaError(where + ": 'frame_index' must be an integer");
    if (!e.contains("gaze") || !e["gaze"].is_array() || e["gaze"].size() != 3)
      throw SchemaError(where + ": 'gaze' must hold three numbers");
    for (const auto& v : e["gaze"])
      if (!v.is_number()) throw SchemaError(where + ": 'gaze' must hold three numbers");
    r.clip_id = e["clip_id"].get<std::string>();
    r.frame_index = e["frame_index"].get<int>();
    r.gaze = GazeVector{e["gaze"][0].get<double>(), e["gaze"][1].get<double>(), e["gaze"][2].get<double>()};
    out.push_back(std::move(r));
  }
  return out;
}

void save_predictions(const std::vector<PredictionRecord>& records, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << predictions_to_json(records).dump(1) << '\n';
}

std::vector<PredictionRecord> load_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open prediction file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw SchemaError("prediction file " + path.string() + " is not valid JSON: " + e.what());
  }
  return predictions_from_json(j);
}

namespace {

struct Accumulator {
  double sum = 0.0;
  int count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
  SplitStats stats() const {
    return {count ? sum / count : std::numeric_limits<double>::quiet_NaN(), count};
  }
};

json stats_json(const SplitStats& s) {
  return json{{"mean_deg", std::isnan(s.mean_deg) ? json(nullptr) : json(s.mean_deg)}, {"count", s.count}};
}

}  // namespace

json EvalReport::to_json() const {
  json frames_json = json::array();
  for (const auto& f : frames)
    frames_json.push_back({{"clip_id", f.clip_id},
                           {"frame_index", f.frame_index},
                           {"error_deg", f.error_deg},
                           {"detectable_face", f.detectable_face},
                           {"front_180", f.front_180},
                           {"front_facing", f.front_facing}});
  return json{{"all", stats_json(all)},
              {"detectable_faces", stats_json(detectable_faces)},
              {"front_180", stats_json(front_180)},
              {"front_facing", stats_json(front_facing)},
              {"frames", frames_json}};
}

std::string EvalReport::table() const {
  std::string out = "split              frames   mean error (deg)\n";
  char buf[128];
  auto row = [&](const char* name, const SplitStats& s) {
    if (s.count == 0) {
      std::snprintf(buf, sizeof buf, "%-18s %6d   %s\n", name, s.count, "n/a");
    } else {
      std::snprintf(buf, sizeof buf, "%-18s %6d   %.2f\n", name, s.count, s.mean_deg);
    }
    out += buf;
  };
  row("all", all);
  row("detectable faces", detectable_faces);
  row("front 180", front_180);
  row("front facing", front_facing);
  return out;
}

EvalReport evaluate(const std::vector<PredictionRecord>& predictions, const Manifest& manifest,
                    const SplitConfig& split) {
  split.validate();
  std::map<std::pair<std::string, int>, GazeVector> by_key;
  for (const auto& p : predictions) {
    if (!by_key.emplace(std::make_pair(p.clip_id, p.frame_index), p.gaze).second)
      throw SchemaError("duplicate prediction for " + p.clip_id + ":" + std::to_string(p.frame_index));
  }
  std::vector<std::string> missing;
  for (const auto& clip : manifest.clips)
    for (int t = 0; t < clip.length(); ++t)
      if (!by_key.count({clip.id, t})) missing.push_back(clip.id + ":" + std::to_string(t));
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) list += (i ? ", " : "") + missing[i];
    throw CoverageError("predictions missing for " + std::to_string(missing.size()) + " frame(s): " + list);
  }
  EvalReport report;
  Accumulator all, det, f180, ff;
  for (const auto& clip : manifest.clips) {
    const auto& face = clip.existence.at(ClueKind::kFace);
    for (int t = 0; t < clip.length(); ++t) {
      FrameError fe;
      fe.clip_id = clip.id;
      fe.frame_index = t;
      const GazeVector& gt = clip.gaze[t];
      fe.error_deg = angular_error_deg(by_key.at({clip.id, t}), gt);
      fe.detectable_face = face[t];
      fe.front_180 = in_front_180(gt);
      fe.front_facing = in_front_facing(gt, split.front_facing_deg);
      all.add(fe.error_deg);
      if (fe.detectable_face) det.add(fe.error_deg);
      if (fe.front_180) f180.add(fe.error_deg);
      if (fe.front_facing) ff.add(fe.error_deg);
      report.frames.push_back(std::move(fe));
    }
  }
  report.all = all.stats();
  report.detectable_faces = det.stats();
  report.front_180 = f180.stats();
  report.front_facing = ff.stats();
  return report;
}

EvalReport evaluate(const fs::path& prediction_file, const Manifest& manifest, const SplitConfig& split) {
  return evaluate(load_predictions(prediction_file), manifest, split);
}

}  // namespace mcgaze
