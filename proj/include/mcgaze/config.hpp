#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "mcgaze/datamodel.hpp"

namespace mcgaze {

using json = nlohmann::json;

enum class BackboneVariant { kToy, kFull };

std::string_view variant_name(BackboneVariant v);

/// Rejects keys outside `known`, naming the full valid set.
void check_keys(const json& j, const std::set<std::string>& known, const std::string& section);

/// Reads j[key] into out when present; wrong types raise ConfigError.
template <typename T>
void read_key(const json& j, const char* key, T& out, const std::string& section) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + section + "." + key + "' has the wrong type");
  }
}

struct LossWeights {
  double lambda1 = 6.0;  // gaze
  double lambda2 = 1.0;  // temporal
  double box_l1_weight = 5.0;
  double box_giou_weight = 2.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

struct ModelConfig {
  BackboneVariant variant = BackboneVariant::kToy;
  int clip_len = 7;      // T
  int stages = 4;        // N
  int channels = 64;     // C
  int heads = 2;         // MHSA heads
  int roi_size = 7;
  int sampling_ratio = 2;
  int image_size = 64;
  bool use_head_clue = true;
  bool use_face_clue = true;
  bool use_eye_clue = true;
  bool use_spatial_interaction = true;
  bool use_temporal_interaction = true;
  bool use_localization_head = true;
  bool use_ffn = false;
  int ffn_dim = 0;  // 0 -> 8*C when use_ffn
  bool sigmoid_confidence = false;
  double existence_threshold = 0.5;
  LossWeights loss;

  static ModelConfig toy();
  static ModelConfig full();

  std::vector<ClueKind> enabled_clues() const;
  /// Throws ConfigError describing the first violated constraint.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct TrainSchedule {
  int batch_size = 4;
  int iterations = 500;
  double lr_backbone = 1e-4;
  double lr_head = 1e-3;
  double weight_decay = 1e-4;
  int lr_decay_iter = 460;
  double lr_decay_factor = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip_norm = 0.0;  // 0 disables
  int checkpoint_every = 0;     // 0: final checkpoint only
  std::uint64_t seed = 0;

  static TrainSchedule toy();
  static TrainSchedule full();

  /// Learning-rate multiplier in effect at 0-based iteration `iter`.
  double lr_scale(int iter) const { return iter >= lr_decay_iter ? lr_decay_factor : 1.0; }
  void validate() const;
  bool operator==(const TrainSchedule&) const = default;
};

struct InferConfig {
  int window_len = 7;
  int stride = 4;
  int smoothing_window = 3;
  void validate() const;
};

struct SplitConfig {
  double front_facing_deg = 20.0;
  void validate() const;
};

void to_json(json& j, const LossWeights& v);
void from_json(const json& j, LossWeights& v);
void to_json(json& j, const ModelConfig& v);
void from_json(const json& j, ModelConfig& v);
void to_json(json& j, const TrainSchedule& v);
void from_json(const json& j, TrainSchedule& v);
void to_json(json& j, const InferConfig& v);
void from_json(const json& j, InferConfig& v);
void to_json(json& j, const SplitConfig& v);
void from_json(const json& j, SplitConfig& v);

}  // namespace mcgaze
