#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mcgaze/autograd.hpp"
#include "mcgaze/backbone.hpp"
#include "mcgaze/config.hpp"
#include "mcgaze/params.hpp"

namespace mcgaze {

/// Per-clue query embeddings and proposal boxes for one clip. Rows are laid
/// out clue-major: row (i*T + t) belongs to clues[i] at frame t.
struct ClueQueryState {
  std::vector<ClueKind> clues;
  int frames = 0;
  ad::Var queries;    // [k*T, C]
  ad::Var proposals;  // [k*T, 4] center-form, normalized
  int stage = 0;

  int clue_count() const { return static_cast<int>(clues.size()); }
  int width() const { return queries.dim(1); }
  int row(int clue_idx, int t) const { return clue_idx * frames + t; }
  ad::Var clue_queries(int clue_idx) const;
  ad::Var clue_proposals(int clue_idx) const;
};

/// Multi-head self-attention block: x + Wo * MHSA(LN(x)) (+ optional
/// feed-forward sublayer with its own pre-norm residual).
class AttentionBlock {
 public:
  AttentionBlock(ParamStore& params, Initializer& init, const std::string& prefix, int channels, int heads,
                 int ffn_dim);

  /// tokens: [groups*len, C], group-major.
  ad::Var forward(const ad::Var& tokens, int groups, int len) const;

  int heads() const { return heads_; }

 private:
  int heads_;
  ad::Var ln_g_, ln_b_;
  ad::Var wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
  bool has_ffn_ = false;
  ad::Var ffn_ln_g_, ffn_ln_b_, w1_, b1_, w2_, b2_;
};

/// Query-conditioned 1x1 dynamic convolution over an RoI feature.
class DynamicConv {
 public:
  DynamicConv(ParamStore& params, Initializer& init, const std::string& prefix, int channels, int roi_size);

  /// queries: [R,C]; roi: [R, S*S, C]. Returns the update added to the queries.
  ad::Var forward(const ad::Var& queries, const ad::Var& roi) const;

  int hidden() const { return hidden_; }

 private:
  int channels_;
  int hidden_;
  int roi_cells_;
  ad::Var ln_q_g_, ln_q_b_;
  ad::Var gen_w_, gen_b_;
  ad::Var ln1_g_, ln1_b_, ln2_g_, ln2_b_;
  ad::Var out_w_, out_b_, ln3_g_, ln3_b_;
};

/// One refinement stage of spatial-temporal query interaction.
class StqiStage {
 public:
  StqiStage(const ModelConfig& cfg, ParamStore& params, Initializer& init, const std::string& prefix);

  /// Attention among the clue tokens of each frame independently. Identity
  /// when spatial interaction is disabled.
  ClueQueryState spatial_interaction(const ClueQueryState& state) const;
  /// Attention along time for each clue independently.
  ClueQueryState temporal_interaction(const ClueQueryState& state) const;
  /// RoI-align at the proposals, dynamic convolution, residual query update.
  ClueQueryState dynamic_update(const ClueQueryState& state, const FeatureMap& fm) const;

  /// Applies the enabled interactions then the dynamic update.
  ClueQueryState run(const ClueQueryState& state, const FeatureMap& fm) const;


 private:
  bool use_spatial_;
  bool use_temporal_;
  int roi_size_;
  int sampling_ratio_;
  std::optional<AttentionBlock> spatial_;   // absent when disabled
  std::optional<AttentionBlock> temporal_;
  DynamicConv dynamic_;
};

/// RoI features for every state row, pooled from the level each box maps to.
/// Returns [k*T, S*S, C].
ad::Var pool_rois(const FeatureMap& fm, const ad::Var& boxes, int frames, int out_size, int sampling_ratio);

}  // namespace mcgaze
