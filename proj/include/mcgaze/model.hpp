#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "mcgaze/autograd.hpp"
#include "mcgaze/backbone.hpp"
#include "mcgaze/config.hpp"
#include "mcgaze/heads.hpp"
#include "mcgaze/params.hpp"
#include "mcgaze/stqi.hpp"

namespace mcgaze {

/// Smallest width or height a proposal may shrink to (normalized units).
inline constexpr double kMinBoxSize = 1e-3;
/// Bound on the log-scale deltas, as in common detection heads (log(1000/16)).
inline constexpr double kMaxLogScale = 4.135166556742356;

/// Clamps center-form rows [n,4] into the unit square with w,h >= kMinBoxSize.
/// Rows that are already valid pass through bit-for-bit.
ad::Var clamp_boxes(const ad::Var& boxes);
Box clamp_box(const Box& b);

/// (cx + dx*w, cy + dy*h, w*exp(dw), h*exp(dh)) followed by clamp_boxes.
/// dw and dh are limited to kMaxLogScale.
ad::Var apply_box_deltas(const ad::Var& boxes, const ad::Var& deltas);
Box apply_box_delta(const Box& b, const std::array<double, 4>& delta);

/// Learned starting proposal for a clue: head = full image, face = centered
/// 60% box, eye = centered band 60% wide and 20% tall.
Box initial_proposal(ClueKind clue);

struct ForwardOutput {
  std::vector<StageOutput> stages;
  ad::Var fused;  // [T,3] from the last stage
};

/// The full network: backbone, N refinement stages each with its own heads,
/// and the learnable per-clue queries and proposals.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// frames: [T,3,H,W] with T <= clip_len. Shorter clips use the first T
  /// query and proposal rows.
  ForwardOutput forward(const ad::Var& frames) const;
  ForwardOutput forward(const VideoClip& clip) const;

  /// Queries and clamped proposals before the first stage.
  ClueQueryState initial_state(int frames) const;
  const Backbone& backbone() const { return *backbone_; }

 private:
  ModelConfig cfg_;
  std::vector<ClueKind> clues_;
  ParamStore params_;
  std::unique_ptr<Backbone> backbone_;
  std::vector<ad::Var> queries_;    // per clue, [clip_len, C]
  std::vector<ad::Var> proposals_;  // per clue, [clip_len, 4]
  std::vector<StqiStage> stages_;
  std::vector<std::vector<ClueHead>> heads_;  // [stage][clue]
  std::vector<FusionHead> fusion_;
};

/// Rounds every stored value to the nearest float32.
void round_to_float(Tensor& t);

}  // namespace mcgaze
