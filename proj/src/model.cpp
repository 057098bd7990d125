#include "mcgaze/model.hpp"

#include <algorithm>
#include <cmath>

namespace mcgaze {

namespace {

// One axis of the box clamp. Returns the new (center, size) and the 2x2
// Jacobian d(center', size') / d(center, size), row-major.
struct AxisClamp {
  double c, s;
  std::array<double, 4> jac;
};

AxisClamp clamp_axis(double c, double s) {
  const double x1 = c - s / 2;
  const double x2 = c + s / 2;
  if (x1 >= 0.0 && x2 <= 1.0 && s >= kMinBoxSize) return {c, s, {1.0, 0.0, 0.0, 1.0}};
  const double a = std::clamp(x1, 0.0, 1.0 - kMinBoxSize);
  const double ka = (x1 >= 0.0 && x1 <= 1.0 - kMinBoxSize) ? 1.0 : 0.0;
  const double b0 = std::clamp(x2, 0.0, 1.0);
  const double kb0 = (x2 >= 0.0 && x2 <= 1.0) ? 1.0 : 0.0;
  const bool tied = b0 < a + kMinBoxSize;
  const double b = tied ? a + kMinBoxSize : b0;
  const double db_dx1 = tied ? ka : 0.0;
  const double db_dx2 = tied ? 0.0 : kb0;
  const double dc_dx1 = (ka + db_dx1) / 2;
  const double dc_dx2 = db_dx2 / 2;
  const double ds_dx1 = db_dx1 - ka;
  const double ds_dx2 = db_dx2;
  // x1 = c - s/2, x2 = c + s/2
  return {(a + b) / 2, b - a,
          {dc_dx1 + dc_dx2, 0.5 * (dc_dx2 - dc_dx1), ds_dx1 + ds_dx2, 0.5 * (ds_dx2 - ds_dx1)}};
}

}  // namespace

void round_to_float(Tensor& t) {
  for (auto& v : t.values()) v = static_cast<double>(static_cast<float>(v));
}

ad::Var clamp_boxes(const ad::Var& boxes) {
  if (boxes.value().rank() != 2 || boxes.dim(1) != 4) throw std::invalid_argument("clamp_boxes: expects [n,4]");
  const int n = boxes.dim(0);
  Tensor out({n, 4});
  std::vector<std::array<double, 4>> jac(2 * n);
  for (int r = 0; r < n; ++r) {
    for (int axis = 0; axis < 2; ++axis) {
      const AxisClamp ac = clamp_axis(boxes.value().at(r, axis), boxes.value().at(r, axis + 2));
      out.at(r, axis) = ac.c;
      out.at(r, axis + 2) = ac.s;
      jac[2 * r + axis] = ac.jac;
    }
  }
  ad::Node* in = boxes.node();
  return ad::custom(std::move(out), {boxes}, [in, jac = std::move(jac), n](ad::Node& self) {
    Tensor& g = in->ensure_grad();
    for (int r = 0; r < n; ++r) {
      for (int axis = 0; axis < 2; ++axis) {
        const auto& J = jac[2 * r + axis];
        const double gc = self.grad.at(r, axis);
        const double gs = self.grad.at(r, axis + 2);
        g.at(r, axis) += J[0] * gc + J[2] * gs;
        g.at(r, axis + 2) += J[1] * gc + J[3] * gs;
      }
    }
  });
}

Box clamp_box(const Box& b) {
  const AxisClamp x = clamp_axis(b.cx, b.w);
  const AxisClamp y = clamp_axis(b.cy, b.h);
  return Box{x.c, y.c, x.s, y.s};
}

ad::Var apply_box_deltas(const ad::Var& boxes, const ad::Var& deltas) {
  if (boxes.shape() != deltas.shape()) throw std::invalid_argument("apply_box_deltas: shape mismatch");
  const ad::Var w = ad::column(boxes, 2);
  const ad::Var h = ad::column(boxes, 3);
  const ad::Var cx = ad::add(ad::column(boxes, 0), ad::mul(ad::column(deltas, 0), w));
  const ad::Var cy = ad::add(ad::column(boxes, 1), ad::mul(ad::column(deltas, 1), h));
  const ad::Var nw = ad::mul(w, ad::exp(ad::clamp(ad::column(deltas, 2), -kMaxLogScale, kMaxLogScale)));
  const ad::Var nh = ad::mul(h, ad::exp(ad::clamp(ad::column(deltas, 3), -kMaxLogScale, kMaxLogScale)));
  return clamp_boxes(ad::stack_cols({cx, cy, nw, nh}));
}

Box apply_box_delta(const Box& b, const std::array<double, 4>& d) {
  const Box moved{b.cx + d[0] * b.w, b.cy + d[1] * b.h,
                  b.w * std::exp(std::clamp(d[2], -kMaxLogScale, kMaxLogScale)),
                  b.h * std::exp(std::clamp(d[3], -kMaxLogScale, kMaxLogScale))};
  return clamp_box(moved);
}

Box initial_proposal(ClueKind clue) {
  switch (clue) {
    case ClueKind::kHead:
      return Box{0.5, 0.5, 1.0, 1.0};
    case ClueKind::kFace:
      return Box{0.5, 0.5, 0.6, 0.6};
    case ClueKind::kEye:
      return Box{0.5, 0.5, 0.6, 0.2};
  }
  throw std::logic_error("initial_proposal: unknown clue");
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  clues_ = cfg_.enabled_clues();
  Initializer init(seed);
  backbone_ = std::make_unique<Backbone>(cfg_, params_, init);
  const int T = cfg_.clip_len;
  const int C = cfg_.channels;
  for (ClueKind clue : clues_) {
    const std::string name(clue_name(clue));
    queries_.push_back(params_.add("query." + name, init.normal({T, C}, 0.02), ParamGroup::kHead));
    const Box b = initial_proposal(clue);
    Tensor p({T, 4});
    for (int t = 0; t < T; ++t) {
      p.at(t, 0) = b.cx;
      p.at(t, 1) = b.cy;
      p.at(t, 2) = b.w;
      p.at(t, 3) = b.h;
    }
    proposals_.push_back(params_.add("proposal." + name, std::move(p), ParamGroup::kHead));
  }
  const int k = static_cast<int>(clues_.size());
  for (int s = 0; s < cfg_.stages; ++s) {
    const std::string prefix = "stage" + std::to_string(s);
    stages_.emplace_back(cfg_, params_, init, prefix);
    std::vector<ClueHead> heads;
    for (ClueKind clue : clues_) heads.emplace_back(cfg_, params_, init, prefix + ".head." + std::string(clue_name(clue)));
    heads_.push_back(std::move(heads));
    fusion_.emplace_back(params_, prefix + ".fusion", k);
  }
  // Parameters live on the float32 grid so checkpoints restore them exactly.
  for (const auto& name : params_.names()) {
    Tensor v = params_.get(name).value();
    round_to_float(v);
    params_.assign(name, v);
  }
}

ClueQueryState Model::initial_state(int frames) const {
  if (frames < 1 || frames > cfg_.clip_len)
    throw std::invalid_argument("forward: clip of " + std::to_string(frames) + " frames exceeds clip_len " +
                                std::to_string(cfg_.clip_len));
  std::vector<ad::Var> q, p;
  for (std::size_t i = 0; i < clues_.size(); ++i) {
    q.push_back(frames == cfg_.clip_len ? queries_[i] : ad::slice_rows(queries_[i], 0, frames));
    p.push_back(frames == cfg_.clip_len ? proposals_[i] : ad::slice_rows(proposals_[i], 0, frames));
  }
  ClueQueryState state;
  state.clues = clues_;
  state.frames = frames;
  state.queries = q.size() == 1 ? q[0] : ad::concat_rows(q);
  state.proposals = clamp_boxes(p.size() == 1 ? p[0] : ad::concat_rows(p));
  state.stage = 0;
  return state;
}

ForwardOutput Model::forward(const VideoClip& clip) const {
  return forward(ad::constant(frames_to_tensor(clip.frames)));
}

ForwardOutput Model::forward(const ad::Var& frames) const {
  const int T = frames.dim(0);
  ClueQueryState state = initial_state(T);
  const FeatureMap fm = backbone_->extract(frames);
  ForwardOutput out;
  for (int s = 0; s < cfg_.stages; ++s) {
    state = stages_[s].run(state, fm);
    StageOutput so;
    so.clues = clues_;
    std::vector<ad::Var> gazes, confidences;
    for (std::size_t i = 0; i < clues_.size(); ++i) {
      CluePrediction pred = heads_[s][i].predict(state.clue_queries(static_cast<int>(i)));
      ad::Var boxes = state.clue_proposals(static_cast<int>(i));
      if (pred.box_delta.defined()) boxes = apply_box_deltas(boxes, pred.box_delta);
      so.boxes.push_back(boxes);
      gazes.push_back(pred.gaze);
      confidences.push_back(pred.confidence);
      so.predictions.push_back(std::move(pred));
    }
    so.fused = fusion_[s].fuse(gazes, confidences);
    state.proposals = so.boxes.size() == 1 ? so.boxes[0] : ad::concat_rows(so.boxes);
    state.stage = s + 1;
    out.stages.push_back(std::move(so));
  }
  out.fused = out.stages.back().fused;
  return out;
}

}  // namespace mcgaze
