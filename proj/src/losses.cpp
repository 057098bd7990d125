#include "mcgaze/losses.hpp"

#include <cmath>

namespace mcgaze {

namespace {

ad::Var const_like(const Shape& shape, double v) { return ad::constant(Tensor(shape, v)); }

struct Corners {
  ad::Var x1, y1, x2, y2;
};

Corners corners(const ad::Var& b) {
  ad::Var cx = ad::column(b, 0), cy = ad::column(b, 1);
  ad::Var hw = ad::mul_scalar(ad::column(b, 2), 0.5);
  ad::Var hh = ad::mul_scalar(ad::column(b, 3), 0.5);
  return {ad::sub(cx, hw), ad::sub(cy, hh), ad::add(cx, hw), ad::add(cy, hh)};
}

Tensor box_rows(const std::vector<Box>& boxes) {
  Tensor t({static_cast<int>(boxes.size()), 4});
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    t.at(i, 0) = boxes[i].cx;
    t.at(i, 1) = boxes[i].cy;
    t.at(i, 2) = boxes[i].w;
    t.at(i, 3) = boxes[i].h;
  }
  return t;
}

Tensor gaze_rows(const std::vector<GazeVector>& g) {
  Tensor t({static_cast<int>(g.size()), 3});
  for (std::size_t i = 0; i < g.size(); ++i) {
    t.at(i, 0) = g[i].x;
    t.at(i, 1) = g[i].y;
    t.at(i, 2) = g[i].z;
  }
  return t;
}

Tensor mask_of(const std::vector<bool>& flags) {
  Tensor m({static_cast<int>(flags.size())});
  for (std::size_t i = 0; i < flags.size(); ++i) m[i] = flags[i] ? 1.0 : 0.0;
  return m;
}

const std::vector<bool>& existence_of(const ClipAnnotations& gt, ClueKind c) {
  auto it = gt.existence.find(c);
  if (it == gt.existence.end()) throw SchemaError("annotations lack existence for " + std::string(clue_name(c)));
  return it->second;
}

}  // namespace

ad::Var focal_loss(const ad::Var& scores, const std::vector<double>& targets, double alpha, double gamma) {
  const Shape& shape = scores.shape();
  if (targets.size() != scores.size()) throw std::invalid_argument("focal_loss: target count mismatch");
  Tensor sign(shape), offset(shape), alpha_t(shape);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const bool pos = targets[i] > 0.5;
    sign[i] = pos ? 1.0 : -1.0;
    offset[i] = pos ? 0.0 : 1.0;
    alpha_t[i] = pos ? alpha : 1.0 - alpha;
  }
  ad::Var p = ad::clamp(scores, kProbClamp, 1.0 - kProbClamp);
  // p_t = p for positives, 1 - p for negatives.
  ad::Var pt = ad::add(ad::mul_const(p, sign), ad::constant(offset));
  ad::Var modulator = gamma == 0.0 ? const_like(shape, 1.0) : ad::pow_scalar(ad::sub(const_like(shape, 1.0), pt), gamma);
  return ad::neg(ad::mul_const(ad::mul(modulator, ad::log(pt)), alpha_t));
}

ad::Var giou(const ad::Var& pred, const ad::Var& target) {
  const Corners a = corners(pred);
  const Corners b = corners(target);
  const Shape s{pred.dim(0)};
  ad::Var zero = const_like(s, 0.0);
  ad::Var iw = ad::maximum(ad::sub(ad::minimum(a.x2, b.x2), ad::maximum(a.x1, b.x1)), zero);
  ad::Var ih = ad::maximum(ad::sub(ad::minimum(a.y2, b.y2), ad::maximum(a.y1, b.y1)), zero);
  ad::Var inter = ad::mul(iw, ih);
  ad::Var area_a = ad::mul(ad::sub(a.x2, a.x1), ad::sub(a.y2, a.y1));
  ad::Var area_b = ad::mul(ad::sub(b.x2, b.x1), ad::sub(b.y2, b.y1));
  ad::Var uni = ad::sub(ad::add(area_a, area_b), inter);
  ad::Var cw = ad::sub(ad::maximum(a.x2, b.x2), ad::minimum(a.x1, b.x1));
  ad::Var ch = ad::sub(ad::maximum(a.y2, b.y2), ad::minimum(a.y1, b.y1));
  ad::Var area_c = ad::mul(cw, ch);
  ad::Var iou = ad::div(inter, uni);
  return ad::sub(iou, ad::div(ad::sub(area_c, uni), area_c));
}

ad::Var box_loss(const ad::Var& pred, const ad::Var& target, const LossWeights& weights) {
  const Shape s{pred.dim(0)};
  ad::Var l1 = ad::mul_scalar(ad::row_sum(ad::abs(ad::sub(pred, target))), 0.25);
  ad::Var giou_term = ad::sub(const_like(s, 1.0), giou(pred, target));
  return ad::add(ad::mul_scalar(l1, weights.box_l1_weight), ad::mul_scalar(giou_term, weights.box_giou_weight));
}

ad::Var arccos_loss(const ad::Var& a, const ad::Var& b) {
  ad::Var dot = ad::row_sum(ad::mul(a, b));
  ad::Var na = ad::sqrt(ad::row_sum(ad::square(a)));
  ad::Var nb = ad::sqrt(ad::row_sum(ad::square(b)));
  ad::Var cosine = ad::div(dot, ad::mul(na, nb));
  return ad::acos(ad::clamp(cosine, -1.0 + kCosineClamp, 1.0 - kCosineClamp));
}

ad::Var temporal_reg(const ad::Var& gaze_seq) {
  const int T = gaze_seq.dim(0);
  if (T < 3) return ad::mul_scalar(ad::sum(gaze_seq), 0.0);
  ad::Var prev = ad::slice_rows(gaze_seq, 0, T - 2);
  ad::Var mid = ad::slice_rows(gaze_seq, 1, T - 1);
  ad::Var next = ad::slice_rows(gaze_seq, 2, T);
  ad::Var second = ad::sub(ad::sub(ad::mul_scalar(mid, 2.0), next), prev);
  return ad::sum(ad::abs(second));
}

// ---------------------------------------------------------------------------

double focal_loss(double score, int target, double alpha, double gamma) {
  return focal_loss(ad::constant(Tensor({1}, {score})), {static_cast<double>(target)}, alpha, gamma).item();
}

double giou(const Box& pred, const Box& target) {
  return giou(ad::constant(box_rows({pred})), ad::constant(box_rows({target}))).item();
}

double box_loss(const Box& pred, const Box& target, const LossWeights& weights) {
  if (!(target.w > 0.0) || !(target.h > 0.0)) throw InvalidBoxError("ground-truth box is degenerate");
  return box_loss(ad::constant(box_rows({pred})), ad::constant(box_rows({target})), weights).item();
}

double arccos_loss(const GazeVector& a, const GazeVector& b) {
  if (!(a.norm() > 1e-12) || !(b.norm() > 1e-12)) throw DegenerateGazeError("arccos_loss: zero-norm gaze");
  return arccos_loss(ad::constant(gaze_rows({a})), ad::constant(gaze_rows({b}))).item();
}

double temporal_reg(const std::vector<std::array<double, 3>>& gaze_seq) {
  if (gaze_seq.size() < 3) return 0.0;
  Tensor t({static_cast<int>(gaze_seq.size()), 3});
  for (std::size_t i = 0; i < gaze_seq.size(); ++i)
    for (int d = 0; d < 3; ++d) t.at(i, d) = gaze_seq[i][d];
  return temporal_reg(ad::constant(t)).item();
}

// ---------------------------------------------------------------------------

double LossReport::gaze() const {
  double g = gaze_fusion;
  for (const auto& [_, v] : gaze_per_clue) g += v;
  return g;
}

ad::Var anchor_loss(const std::vector<StageOutput>& stages, const ClipAnnotations& gt, const LossWeights& weights,
                    bool supervise_boxes) {
  std::vector<ad::Var> terms;
  for (const auto& stage : stages) {
    for (std::size_t i = 0; i < stage.clues.size(); ++i) {
      const ClueKind clue = stage.clues[i];
      const auto& exist = existence_of(gt, clue);
      const auto& pred = stage.predictions[i];
      if (exist.size() != pred.existence.size())
        throw std::invalid_argument("anchor_loss: prediction and annotation lengths differ");
      std::vector<double> targets(exist.begin(), exist.end());
      terms.push_back(ad::sum(focal_loss(pred.existence, targets, weights.focal_alpha, weights.focal_gamma)));

      if (!supervise_boxes || i >= stage.boxes.size() || !stage.boxes[i].defined()) continue;
      // Masked rows get a stand-in box so their (discarded) terms stay finite.
      std::vector<Box> target = gt.boxes.at(clue);
      for (std::size_t t = 0; t < target.size(); ++t) {
        if (!exist[t]) {
          target[t] = Box{};
        } else if (!(target[t].w > 0.0) || !(target[t].h > 0.0)) {
          throw InvalidBoxError("ground-truth " + std::string(clue_name(clue)) + " box at frame " +
                                std::to_string(t) + " is degenerate");
        }
      }
      ad::Var per_row = box_loss(stage.boxes[i], ad::constant(box_rows(target)), weights);
      terms.push_back(ad::sum(ad::mul_const(per_row, mask_of(exist))));
    }
  }
  if (terms.empty()) return ad::constant(Tensor::scalar(0.0));
  ad::Var total = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
  return total;
}

ad::Var gaze_fusion_loss(const std::vector<StageOutput>& stages, const ClipAnnotations& gt) {
  ad::Var target = ad::constant(gaze_rows(gt.gaze));
  ad::Var total;
  for (const auto& stage : stages) {
    ad::Var term = ad::sum(arccos_loss(stage.fused, target));
    total = total.defined() ? ad::add(total, term) : term;
  }
  return total.defined() ? total : ad::constant(Tensor::scalar(0.0));
}

std::map<ClueKind, ad::Var> gaze_clue_losses(const std::vector<StageOutput>& stages, const ClipAnnotations& gt) {
  ad::Var target = ad::constant(gaze_rows(gt.gaze));
  std::map<ClueKind, ad::Var> out;
  for (const auto& stage : stages) {
    for (std::size_t i = 0; i < stage.clues.size(); ++i) {
      const ClueKind clue = stage.clues[i];
      ad::Var per_row = arccos_loss(stage.predictions[i].gaze, target);
      ad::Var term = ad::sum(ad::mul_const(per_row, mask_of(existence_of(gt, clue))));
      auto it = out.find(clue);
      if (it == out.end()) {
        out.emplace(clue, term);
      } else {
        it->second = ad::add(it->second, term);
      }
    }
  }
  return out;
}

LossTerms compute_loss_terms(const std::vector<StageOutput>& stages, const ClipAnnotations& gt,
                             const LossWeights& weights, bool supervise_boxes) {
  if (stages.empty()) throw std::invalid_argument("compute_loss_terms: no stages");
  LossTerms terms;
  terms.anchor = anchor_loss(stages, gt, weights, supervise_boxes);
  terms.gaze_fusion = gaze_fusion_loss(stages, gt);
  terms.gaze_per_clue = gaze_clue_losses(stages, gt);
  terms.temporal = temporal_reg(stages.back().fused);
  return terms;
}

ad::Var total_loss(const LossTerms& terms, const LossWeights& weights, LossReport* report) {
  ad::Var gaze = terms.gaze_fusion;
  for (const auto& [_, v] : terms.gaze_per_clue) gaze = ad::add(gaze, v);
  ad::Var total = ad::add(ad::add(terms.anchor, ad::mul_scalar(gaze, weights.lambda1)),
                          ad::mul_scalar(terms.temporal, weights.lambda2));
  if (report) {
    std::map<ClueKind, double> per_clue;
    for (const auto& [k, v] : terms.gaze_per_clue) per_clue[k] = v.item();
    *report = total_loss(terms.anchor.item(), terms.gaze_fusion.item(), per_clue, terms.temporal.item(), weights);
  }
  return total;
}

LossReport total_loss(double anchor, double gaze_fusion, const std::map<ClueKind, double>& gaze_per_clue,
                      double temporal, const LossWeights& weights) {
  LossReport r;
  r.anchor = anchor;
  r.gaze_fusion = gaze_fusion;
  r.gaze_per_clue = gaze_per_clue;
  r.temporal = temporal;
  r.total = anchor + weights.lambda1 * r.gaze() + weights.lambda2 * temporal;
  return r;
}

}  // namespace mcgaze
