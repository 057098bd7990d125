#pragma once

#include <array>
#include <map>
#include <vector>

#include "mcgaze/autograd.hpp"
#include "mcgaze/config.hpp"
#include "mcgaze/datamodel.hpp"
#include "mcgaze/heads.hpp"

namespace mcgaze {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kCosineClamp = 1e-7;

// ---- differentiable building blocks (row-wise, not reduced) ----

/// Focal loss per element. scores: [n] in (0,1); targets are 0/1.
ad::Var focal_loss(const ad::Var& scores, const std::vector<double>& targets, double alpha, double gamma);
/// Generalized IoU per row for center-form boxes [n,4].
ad::Var giou(const ad::Var& pred, const ad::Var& target);
/// weights.box_l1_weight * mean|pred-target| + weights.box_giou_weight * (1 - GIoU), per row.
ad::Var box_loss(const ad::Var& pred, const ad::Var& target, const LossWeights& weights);
/// Angle in radians between rows of a and b ([n,3] each).
ad::Var arccos_loss(const ad::Var& a, const ad::Var& b);
/// Sum over interior frames of the L1 norm of the second difference. [T,3] -> [1].
ad::Var temporal_reg(const ad::Var& gaze_seq);

// ---- scalar conveniences ----

double focal_loss(double score, int target, double alpha, double gamma);
double giou(const Box& pred, const Box& target);
/// Throws InvalidBoxError on a degenerate ground-truth box.
double box_loss(const Box& pred, const Box& target, const LossWeights& weights);
/// Throws DegenerateGazeError on a zero-norm argument.
double arccos_loss(const GazeVector& a, const GazeVector& b);
double temporal_reg(const std::vector<std::array<double, 3>>& gaze_seq);

// ---- training objective ----

struct LossReport {
  double anchor = 0.0;
  double gaze_fusion = 0.0;
  std::map<ClueKind, double> gaze_per_clue;
  double temporal = 0.0;
  double total = 0.0;

  double gaze() const;
};

struct LossTerms {
  ad::Var anchor;
  ad::Var gaze_fusion;
  std::map<ClueKind, ad::Var> gaze_per_clue;
  ad::Var temporal;
};

/// Focal existence loss over every (t, clue) plus box loss where the clue
/// exists, summed over all stages. Box terms are skipped when the stage
/// carries no refined boxes from a localization head.
ad::Var anchor_loss(const std::vector<StageOutput>& stages, const ClipAnnotations& gt,
                    const LossWeights& weights, bool supervise_boxes = true);

/// Fusion arccos term over all frames and stages.
ad::Var gaze_fusion_loss(const std::vector<StageOutput>& stages, const ClipAnnotations& gt);
/// Per-clue arccos terms, masked to frames where the clue exists.
std::map<ClueKind, ad::Var> gaze_clue_losses(const std::vector<StageOutput>& stages, const ClipAnnotations& gt);

LossTerms compute_loss_terms(const std::vector<StageOutput>& stages, const ClipAnnotations& gt,
                             const LossWeights& weights, bool supervise_boxes = true);

/// Weighted total: anchor + lambda1 * gaze + lambda2 * temporal.
ad::Var total_loss(const LossTerms& terms, const LossWeights& weights, LossReport* report = nullptr);
LossReport total_loss(double anchor, double gaze_fusion, const std::map<ClueKind, double>& gaze_per_clue,
                      double temporal, const LossWeights& weights);

}  // namespace mcgaze
