#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mcgaze/autograd.hpp"
#include "mcgaze/config.hpp"
#include "mcgaze/params.hpp"

namespace mcgaze {

/// Two-layer perceptron with a rectified hidden layer.
class Mlp {
 public:
  Mlp(ParamStore& params, Initializer& init, const std::string& prefix, int in, int hidden, int out);

  ad::Var forward(const ad::Var& x) const;

  const ad::Var& final_weight() const { return w2_; }
  const ad::Var& final_bias() const { return b2_; }

 private:
  ad::Var w1_, b1_, w2_, b2_;
};

/// Per-clue outputs of one stage, each over the clip's T frames.
struct CluePrediction {
  ad::Var existence;   // [T] in (0,1)
  ad::Var box_delta;   // [T,4]; undefined when localization is disabled
  ad::Var gaze;        // [T,3]
  ad::Var confidence;  // [T]
};

/// Everything one refinement stage emits for a clip.
struct StageOutput {
  std::vector<ClueKind> clues;
  std::vector<CluePrediction> predictions;  // aligned with clues
  std::vector<ad::Var> boxes;               // refined proposals per clue, [T,4]
  ad::Var fused;                            // [T,3]
};

/// Clue localization and per-clue gaze heads for one clue in one stage.
class ClueHead {
 public:
  ClueHead(const ModelConfig& cfg, ParamStore& params, Initializer& init, const std::string& prefix);

  ad::Var predict_existence(const ad::Var& q) const;
  /// Undefined Var when the localization head is disabled.
  ad::Var localize(const ad::Var& q) const;
  ad::Var predict_gaze(const ad::Var& q) const;
  ad::Var predict_confidence(const ad::Var& q) const;

  CluePrediction predict(const ad::Var& q) const;

 private:
  bool sigmoid_confidence_;
  Mlp existence_;
  std::optional<Mlp> box_;
  Mlp gaze_;
  Mlp confidence_;
};

/// Confidence-weighted fusion of per-clue gaze: FC([g_i * c_i]_i) with the
/// clue products concatenated in head, face, eye order.
class FusionHead {
 public:
  FusionHead(ParamStore& params, const std::string& prefix, int clue_count);

  /// gazes[i]: [T,3], confidences[i]: [T]. Returns [T,3].
  ad::Var fuse(const std::vector<ad::Var>& gazes, const std::vector<ad::Var>& confidences) const;

  const ad::Var& weight() const { return w_; }
  const ad::Var& bias() const { return b_; }

 private:
  int clue_count_;
  ad::Var w_, b_;
};

}  // namespace mcgaze
