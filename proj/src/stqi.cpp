#include "mcgaze/stqi.hpp"

#include <cmath>

namespace mcgaze {

ad::Var ClueQueryState::clue_queries(int clue_idx) const {
  return ad::slice_rows(queries, clue_idx * frames, (clue_idx + 1) * frames);
}

ad::Var ClueQueryState::clue_proposals(int clue_idx) const {
  return ad::slice_rows(proposals, clue_idx * frames, (clue_idx + 1) * frames);
}

// ---------------------------------------------------------------------------

AttentionBlock::AttentionBlock(ParamStore& params, Initializer& init, const std::string& prefix, int channels,
                               int heads, int ffn_dim)
    : heads_(heads) {
  auto g = ParamGroup::kHead;
  const int c = channels;
  ln_g_ = params.add(prefix + ".norm.gamma", Tensor({c}, 1.0), g);
  ln_b_ = params.add(prefix + ".norm.beta", Tensor({c}), g);
  wq_ = params.add(prefix + ".wq", init.xavier(c, c), g);
  bq_ = params.add(prefix + ".bq", Tensor({c}), g);
  wk_ = params.add(prefix + ".wk", init.xavier(c, c), g);
  bk_ = params.add(prefix + ".bk", Tensor({c}), g);
  wv_ = params.add(prefix + ".wv", init.xavier(c, c), g);
  bv_ = params.add(prefix + ".bv", Tensor({c}), g);
  wo_ = params.add(prefix + ".wo", init.xavier(c, c), g);
  bo_ = params.add(prefix + ".bo", Tensor({c}), g);
  if (ffn_dim > 0) {
    has_ffn_ = true;
    ffn_ln_g_ = params.add(prefix + ".ffn.norm.gamma", Tensor({c}, 1.0), g);
    ffn_ln_b_ = params.add(prefix + ".ffn.norm.beta", Tensor({c}), g);
    w1_ = params.add(prefix + ".ffn.w1", init.xavier(c, ffn_dim), g);
    b1_ = params.add(prefix + ".ffn.b1", Tensor({ffn_dim}), g);
    w2_ = params.add(prefix + ".ffn.w2", init.xavier(ffn_dim, c), g);
    b2_ = params.add(prefix + ".ffn.b2", Tensor({c}), g);
  }
}

ad::Var AttentionBlock::forward(const ad::Var& tokens, int groups, int len) const {
  ad::Var x = ad::layer_norm(tokens, ln_g_, ln_b_);
  ad::Var q = ad::linear(x, wq_, bq_);
  ad::Var k = ad::linear(x, wk_, bk_);
  ad::Var v = ad::linear(x, wv_, bv_);
  ad::Var a = ad::attention(q, k, v, groups, len, heads_);
  ad::Var out = ad::add(tokens, ad::linear(a, wo_, bo_));
  if (has_ffn_) {
    ad::Var h = ad::layer_norm(out, ffn_ln_g_, ffn_ln_b_);
    h = ad::linear(ad::relu(ad::linear(h, w1_, b1_)), w2_, b2_);
    out = ad::add(out, h);
  }
  return out;
}

// ---------------------------------------------------------------------------

DynamicConv::DynamicConv(ParamStore& params, Initializer& init, const std::string& prefix, int channels,
                         int roi_size)
    : channels_(channels), hidden_(channels / 4), roi_cells_(roi_size * roi_size) {
  auto g = ParamGroup::kHead;
  const int c = channels_;
  const int d = hidden_;
  ln_q_g_ = params.add(prefix + ".query_norm.gamma", Tensor({c}, 1.0), g);
  ln_q_b_ = params.add(prefix + ".query_norm.beta", Tensor({c}), g);
  gen_w_ = params.add(prefix + ".generator.weight", init.xavier(c, 2 * c * d), g);
  gen_b_ = params.add(prefix + ".generator.bias", Tensor({2 * c * d}), g);
  ln1_g_ = params.add(prefix + ".norm1.gamma", Tensor({d}, 1.0), g);
  ln1_b_ = params.add(prefix + ".norm1.beta", Tensor({d}), g);
  ln2_g_ = params.add(prefix + ".norm2.gamma", Tensor({c}, 1.0), g);
  ln2_b_ = params.add(prefix + ".norm2.beta", Tensor({c}), g);
  out_w_ = params.add(prefix + ".out.weight", init.xavier(roi_cells_ * c, c), g);
  out_b_ = params.add(prefix + ".out.bias", Tensor({c}), g);
  ln3_g_ = params.add(prefix + ".norm3.gamma", Tensor({c}, 1.0), g);
  ln3_b_ = params.add(prefix + ".norm3.beta", Tensor({c}), g);
}

ad::Var DynamicConv::forward(const ad::Var& queries, const ad::Var& roi) const {
  const int R = queries.dim(0);
  const int c = channels_;
  const int d = hidden_;
  ad::Var filters = ad::linear(ad::layer_norm(queries, ln_q_g_, ln_q_b_), gen_w_, gen_b_);  // [R, 2cd]
  ad::Var p1 = ad::reshape(ad::slice_cols(filters, 0, c * d), {R, c, d});
  ad::Var p2 = ad::reshape(ad::slice_cols(filters, c * d, 2 * c * d), {R, d, c});
  ad::Var h = ad::relu(ad::layer_norm(ad::bmm(roi, p1), ln1_g_, ln1_b_));  // [R, SS, d]
  h = ad::relu(ad::layer_norm(ad::bmm(h, p2), ln2_g_, ln2_b_));             // [R, SS, c]
  h = ad::reshape(h, {R, roi_cells_ * c});
  return ad::relu(ad::layer_norm(ad::linear(h, out_w_, out_b_), ln3_g_, ln3_b_));
}

// ---------------------------------------------------------------------------

ad::Var pool_rois(const FeatureMap& fm, const ad::Var& boxes, int frames, int out_size, int sampling_ratio) {
  const int R = boxes.dim(0);
  std::vector<int> frame_of(R);
  for (int r = 0; r < R; ++r) frame_of[r] = r % frames;
  if (fm.levels.size() == 1) return ad::roi_align(fm.levels[0], boxes, frame_of, out_size, sampling_ratio);

  // Multi-level: group rows by assigned level, pool, then restore row order.
  const int min_level = static_cast<int>(std::lround(std::log2(fm.strides.front())));
  const int max_level = min_level + static_cast<int>(fm.levels.size()) - 1;
  std::vector<std::vector<int>> rows_of(fm.levels.size());
  for (int r = 0; r < R; ++r) {
    const auto& b = boxes.value();
    Box box{b.at(r, 0), b.at(r, 1), b.at(r, 2), b.at(r, 3)};
    rows_of[pyramid_level_for_box(box, min_level, max_level) - min_level].push_back(r);
  }
  std::vector<ad::Var> pooled;
  std::vector<int> order;
  for (std::size_t l = 0; l < rows_of.size(); ++l) {
    if (rows_of[l].empty()) continue;
    std::vector<int> frame_sub;
    for (int r : rows_of[l]) frame_sub.push_back(frame_of[r]);
    pooled.push_back(
        ad::roi_align(fm.levels[l], ad::gather_rows(boxes, rows_of[l]), frame_sub, out_size, sampling_ratio));
    order.insert(order.end(), rows_of[l].begin(), rows_of[l].end());
  }
  std::vector<int> inverse(R);
  for (int i = 0; i < R; ++i) inverse[order[i]] = i;
  return ad::gather_rows(ad::concat_rows(pooled), inverse);
}

StqiStage::StqiStage(const ModelConfig& cfg, ParamStore& params, Initializer& init, const std::string& prefix)
    : use_spatial_(cfg.use_spatial_interaction),
      use_temporal_(cfg.use_temporal_interaction),
      roi_size_(cfg.roi_size),
      sampling_ratio_(cfg.sampling_ratio),
      dynamic_(params, init, prefix + ".dynamic", cfg.channels, cfg.roi_size) {
  const int ffn = cfg.use_ffn ? (cfg.ffn_dim > 0 ? cfg.ffn_dim : 8 * cfg.channels) : 0;
  if (use_spatial_) spatial_.emplace(params, init, prefix + ".spatial", cfg.channels, cfg.heads, ffn);
  if (use_temporal_) temporal_.emplace(params, init, prefix + ".temporal", cfg.channels, cfg.heads, ffn);
}

ClueQueryState StqiStage::spatial_interaction(const ClueQueryState& state) const {
  if (!spatial_) return state;
  const int k = state.clue_count();
  const int T = state.frames;
  // clue-major -> frame-major, attend within each frame, and back.
  std::vector<int> to_frame_major(k * T);
  std::vector<int> to_clue_major(k * T);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < k; ++i) {
      to_frame_major[t * k + i] = state.row(i, t);
      to_clue_major[state.row(i, t)] = t * k + i;
    }
  ad::Var tokens = ad::gather_rows(state.queries, to_frame_major);
  ad::Var updated = spatial_->forward(tokens, T, k);
  ClueQueryState out = state;
  out.queries = ad::gather_rows(updated, to_clue_major);
  return out;
}

ClueQueryState StqiStage::temporal_interaction(const ClueQueryState& state) const {
  if (!temporal_) return state;
  ClueQueryState out = state;
  out.queries = temporal_->forward(state.queries, state.clue_count(), state.frames);
  return out;
}

ClueQueryState StqiStage::dynamic_update(const ClueQueryState& state, const FeatureMap& fm) const {
  if (fm.frames() != state.frames)
    throw std::invalid_argument("dynamic_update: feature map frame count does not match queries");
  ad::Var roi = pool_rois(fm, state.proposals, state.frames, roi_size_, sampling_ratio_);
  ClueQueryState out = state;
  out.queries = ad::add(state.queries, dynamic_.forward(state.queries, roi));
  return out;
}

ClueQueryState StqiStage::run(const ClueQueryState& state, const FeatureMap& fm) const {
  ClueQueryState s = state;
  s = spatial_interaction(s);
  s = temporal_interaction(s);
  return dynamic_update(s, fm);
}

}  // namespace mcgaze
