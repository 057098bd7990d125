#include "mcgaze/config.hpp"


namespace mcgaze {

void check_keys(const json& j, const std::set<std::string>& known, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (!known.count(k)) {
      std::string list;
      for (const auto& n : known) list += (list.empty() ? "" : ", ") + section + "." + n;
      throw ConfigError("unknown config key '" + section + "." + k + "'; valid keys: " + list);
    }
  }
}

std::string_view variant_name(BackboneVariant v) { return v == BackboneVariant::kToy ? "toy" : "full"; }

void LossWeights::validate() const {
  for (double w : {lambda1, lambda2, box_l1_weight, box_giou_weight, focal_alpha, focal_gamma})
    if (!(w >= 0.0)) throw ConfigError("loss weights must be nonnegative");
}

ModelConfig ModelConfig::toy() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.variant = BackboneVariant::kFull;
  c.channels = 256;
  c.heads = 8;
  c.image_size = 448;
  return c;
}

std::vector<ClueKind> ModelConfig::enabled_clues() const {
  std::vector<ClueKind> out;
  if (use_head_clue) out.push_back(ClueKind::kHead);
  if (use_face_clue) out.push_back(ClueKind::kFace);
  if (use_eye_clue) out.push_back(ClueKind::kEye);
  return out;
}

void ModelConfig::validate() const {
  if (enabled_clues().empty()) throw ConfigError("model: at least one clue must be enabled");
  if (stages < 1) throw ConfigError("model.stages must be >= 1");
  if (clip_len < 1) throw ConfigError("model.clip_len must be >= 1");
  if (channels < 4 || channels % 4 != 0) throw ConfigError("model.channels must be a positive multiple of 4");
  if (heads < 1 || channels % heads != 0) throw ConfigError("model.heads must divide model.channels");
  if (roi_size < 1) throw ConfigError("model.roi_size must be >= 1");
  if (sampling_ratio < 1) throw ConfigError("model.sampling_ratio must be >= 1");
  if (ffn_dim < 0) throw ConfigError("model.ffn_dim must be >= 0");
  if (!(existence_threshold > 0.0 && existence_threshold < 1.0))
    throw ConfigError("model.existence_threshold must lie in (0,1)");
  const int stride = variant == BackboneVariant::kToy ? 8 : 32;
  if (image_size < stride || image_size % stride != 0)
    throw ConfigError("model.image_size must be a positive multiple of " + std::to_string(stride) +
                      " for the " + std::string(variant_name(variant)) + " backbone");
  loss.validate();
}

TrainSchedule TrainSchedule::toy() { return TrainSchedule{}; }

TrainSchedule TrainSchedule::full() {
  TrainSchedule s;
  s.batch_size = 8;
  s.iterations = 13000;
  s.lr_decay_iter = 12000;
  return s;
}

void TrainSchedule::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (iterations < 0) throw ConfigError("train.iterations must be >= 0");
  if (!(lr_backbone >= 0.0) || !(lr_head >= 0.0)) throw ConfigError("train learning rates must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (lr_decay_iter < 0) throw ConfigError("train.lr_decay_iter must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("train betas must lie in [0,1)");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (!(grad_clip_norm >= 0.0)) throw ConfigError("train.grad_clip_norm must be >= 0");
}

void InferConfig::validate() const {
  if (window_len < 1) throw ConfigError("infer.window_len must be >= 1");
  if (stride < 1) throw ConfigError("infer.stride must be >= 1");
  if (smoothing_window < 1 || smoothing_window % 2 == 0)
    throw ConfigError("infer.smoothing_window must be a positive odd integer");
}

void SplitConfig::validate() const {
  if (!(front_facing_deg > 0.0 && front_facing_deg <= 180.0))
    throw ConfigError("eval.front_facing_deg must lie in (0,180]");
}

void to_json(json& j, const LossWeights& v) {
  j = json{{"lambda1", v.lambda1},           {"lambda2", v.lambda2},
           {"box_l1_weight", v.box_l1_weight}, {"box_giou_weight", v.box_giou_weight},
           {"focal_alpha", v.focal_alpha},   {"focal_gamma", v.focal_gamma}};
}

void from_json(const json& j, LossWeights& v) {
  const std::string s = "model.loss";
  check_keys(j, {"lambda1", "lambda2", "box_l1_weight", "box_giou_weight", "focal_alpha", "focal_gamma"}, s);
  read_key(j, "lambda1", v.lambda1, s);
  read_key(j, "lambda2", v.lambda2, s);
  read_key(j, "box_l1_weight", v.box_l1_weight, s);
  read_key(j, "box_giou_weight", v.box_giou_weight, s);
  read_key(j, "focal_alpha", v.focal_alpha, s);
  read_key(j, "focal_gamma", v.focal_gamma, s);
}

void to_json(json& j, const ModelConfig& v) {
  j = json{{"variant", std::string(variant_name(v.variant))},
           {"clip_len", v.clip_len},
           {"stages", v.stages},
           {"channels", v.channels},
           {"heads", v.heads},
           {"roi_size", v.roi_size},
           {"sampling_ratio", v.sampling_ratio},
           {"image_size", v.image_size},
           {"use_head_clue", v.use_head_clue},
           {"use_face_clue", v.use_face_clue},
           {"use_eye_clue", v.use_eye_clue},
           {"use_spatial_interaction", v.use_spatial_interaction},
           {"use_temporal_interaction", v.use_temporal_interaction},
           {"use_localization_head", v.use_localization_head},
           {"use_ffn", v.use_ffn},
           {"ffn_dim", v.ffn_dim},
           {"sigmoid_confidence", v.sigmoid_confidence},
           {"existence_threshold", v.existence_threshold},
           {"loss", v.loss}};
}

void from_json(const json& j, ModelConfig& v) {
  const std::string s = "model";
  check_keys(j,
             {"variant", "clip_len", "stages", "channels", "heads", "roi_size", "sampling_ratio",
              "image_size", "use_head_clue", "use_face_clue", "use_eye_clue", "use_spatial_interaction",
              "use_temporal_interaction", "use_localization_head", "use_ffn", "ffn_dim",
              "sigmoid_confidence", "existence_threshold", "loss"},
             s);
  if (auto it = j.find("variant"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config key 'model.variant' must be a string");
    const auto name = it->get<std::string>();
    if (name == "toy") {
      v.variant = BackboneVariant::kToy;
    } else if (name == "full") {
      v.variant = BackboneVariant::kFull;
    } else {
      throw ConfigError("model.variant must be 'toy' or 'full', got '" + name + "'");
    }
  }
  read_key(j, "clip_len", v.clip_len, s);
  read_key(j, "stages", v.stages, s);
  read_key(j, "channels", v.channels, s);
  read_key(j, "heads", v.heads, s);
  read_key(j, "roi_size", v.roi_size, s);
  read_key(j, "sampling_ratio", v.sampling_ratio, s);
  read_key(j, "image_size", v.image_size, s);
  read_key(j, "use_head_clue", v.use_head_clue, s);
  read_key(j, "use_face_clue", v.use_face_clue, s);
  read_key(j, "use_eye_clue", v.use_eye_clue, s);
  read_key(j, "use_spatial_interaction", v.use_spatial_interaction, s);
  read_key(j, "use_temporal_interaction", v.use_temporal_interaction, s);
  read_key(j, "use_localization_head", v.use_localization_head, s);
  read_key(j, "use_ffn", v.use_ffn, s);
  read_key(j, "ffn_dim", v.ffn_dim, s);
  read_key(j, "sigmoid_confidence", v.sigmoid_confidence, s);
  read_key(j, "existence_threshold", v.existence_threshold, s);
  if (auto it = j.find("loss"); it != j.end()) from_json(*it, v.loss);
}

void to_json(json& j, const TrainSchedule& v) {
  j = json{{"batch_size", v.batch_size},   {"iterations", v.iterations},
           {"lr_backbone", v.lr_backbone}, {"lr_head", v.lr_head},
           {"weight_decay", v.weight_decay}, {"lr_decay_iter", v.lr_decay_iter},
           {"lr_decay_factor", v.lr_decay_factor}, {"beta1", v.beta1},
           {"beta2", v.beta2},             {"adam_eps", v.adam_eps},
           {"grad_clip_norm", v.grad_clip_norm}, {"checkpoint_every", v.checkpoint_every},
           {"seed", v.seed}};
}

void from_json(const json& j, TrainSchedule& v) {
  const std::string s = "train";
  check_keys(j,
             {"batch_size", "iterations", "lr_backbone", "lr_head", "weight_decay", "lr_decay_iter",
              "lr_decay_factor", "beta1", "beta2", "adam_eps", "grad_clip_norm", "checkpoint_every", "seed"},
             s);
  read_key(j, "batch_size", v.batch_size, s);
  read_key(j, "iterations", v.iterations, s);
  read_key(j, "lr_backbone", v.lr_backbone, s);
  read_key(j, "lr_head", v.lr_head, s);
  read_key(j, "weight_decay", v.weight_decay, s);
  read_key(j, "lr_decay_iter", v.lr_decay_iter, s);
  read_key(j, "lr_decay_factor", v.lr_decay_factor, s);
  read_key(j, "beta1", v.beta1, s);
  read_key(j, "beta2", v.beta2, s);
  read_key(j, "adam_eps", v.adam_eps, s);
  read_key(j, "grad_clip_norm", v.grad_clip_norm, s);
  read_key(j, "checkpoint_every", v.checkpoint_every, s);
  read_key(j, "seed", v.seed, s);
}

void to_json(json& j, const InferConfig& v) {
  j = json{{"window_len", v.window_len}, {"stride", v.stride}, {"smoothing_window", v.smoothing_window}};
}

void from_json(const json& j, InferConfig& v) {
  const std::string s = "infer";
  check_keys(j, {"window_len", "stride", "smoothing_window"}, s);
  read_key(j, "window_len", v.window_len, s);
  read_key(j, "stride", v.stride, s);
  read_key(j, "smoothing_window", v.smoothing_window, s);
}

void to_json(json& j, const SplitConfig& v) { j = json{{"front_facing_deg", v.front_facing_deg}}; }

void from_json(const json& j, SplitConfig& v) {
  const std::string s = "eval";
  check_keys(j, {"front_facing_deg"}, s);
  read_key(j, "front_facing_deg", v.front_facing_deg, s);
}

}  // namespace mcgaze
