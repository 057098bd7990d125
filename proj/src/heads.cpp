#include "mcgaze/heads.hpp"

#include <cmath>

namespace mcgaze {

Mlp::Mlp(ParamStore& params, Initializer& init, const std::string& prefix, int in, int hidden, int out) {
  auto g = ParamGroup::kHead;
  w1_ = params.add(prefix + ".fc1.weight", init.xavier(in, hidden), g);
  b1_ = params.add(prefix + ".fc1.bias", Tensor({hidden}), g);
  w2_ = params.add(prefix + ".fc2.weight", init.xavier(hidden, out), g);
  b2_ = params.add(prefix + ".fc2.bias", Tensor({out}), g);
}

ad::Var Mlp::forward(const ad::Var& x) const {
  return ad::linear(ad::relu(ad::linear(x, w1_, b1_)), w2_, b2_);
}

namespace {
void scale_in_place(const ad::Var& v, double s) {
  for (auto& x : v.node()->value.values()) x *= s;
}
}  // namespace

ClueHead::ClueHead(const ModelConfig& cfg, ParamStore& params, Initializer& init, const std::string& prefix)
    : sigmoid_confidence_(cfg.sigmoid_confidence),
      existence_(params, init, prefix + ".existence", cfg.channels, cfg.channels, 1),
      gaze_(params, init, prefix + ".gaze", cfg.channels, cfg.channels, 3),
      confidence_(params, init, prefix + ".confidence", cfg.channels, cfg.channels, 1) {
  if (cfg.use_localization_head) {
    box_.emplace(params, init, prefix + ".box", cfg.channels, cfg.channels, 4);
    // Near-zero initial deltas keep the first stages close to the proposals.
    scale_in_place(box_->final_weight(), 0.01);
  }
  // Focal-loss prior: initial existence probability 0.01.
  existence_.final_bias().node()->value[0] = -std::log((1.0 - 0.01) / 0.01);
  gaze_.final_bias().node()->value[2] = -1.0;
  confidence_.final_bias().node()->value[0] = 1.0;
}

ad::Var ClueHead::predict_existence(const ad::Var& q) const {
  return ad::sigmoid(ad::reshape(existence_.forward(q), {q.dim(0)}));
}

ad::Var ClueHead::localize(const ad::Var& q) const { return box_ ? box_->forward(q) : ad::Var(); }

ad::Var ClueHead::predict_gaze(const ad::Var& q) const { return gaze_.forward(q); }

ad::Var ClueHead::predict_confidence(const ad::Var& q) const {
  ad::Var c = ad::reshape(confidence_.forward(q), {q.dim(0)});
  return sigmoid_confidence_ ? ad::sigmoid(c) : c;
}

CluePrediction ClueHead::predict(const ad::Var& q) const {
  return {predict_existence(q), localize(q), predict_gaze(q), predict_confidence(q)};
}

FusionHead::FusionHead(ParamStore& params, const std::string& prefix, int clue_count) : clue_count_(clue_count) {
  // Starts as the mean of the confidence-weighted clue gazes.
  Tensor w({3 * clue_count, 3});
  for (int i = 0; i < clue_count; ++i)
    for (int d = 0; d < 3; ++d) w.at(3 * i + d, d) = 1.0 / clue_count;
  w_ = params.add(prefix + ".weight", std::move(w), ParamGroup::kHead);
  b_ = params.add(prefix + ".bias", Tensor({3}), ParamGroup::kHead);
}

ad::Var FusionHead::fuse(const std::vector<ad::Var>& gazes, const std::vector<ad::Var>& confidences) const {
  if (static_cast<int>(gazes.size()) != clue_count_ || confidences.size() != gazes.size())
    throw std::logic_error("fuse_gaze: expected one gaze and one confidence per enabled clue");
  const int T = gazes[0].dim(0);
  std::vector<ad::Var> weighted;
  for (std::size_t i = 0; i < gazes.size(); ++i) {
    if (gazes[i].dim(0) != T || confidences[i].dim(0) != T)
      throw std::logic_error("fuse_gaze: clue predictions disagree on frame count");
    weighted.push_back(ad::mul_rows(gazes[i], confidences[i]));
  }
  return ad::linear(ad::concat_cols(weighted), w_, b_);
}

}  // namespace mcgaze
