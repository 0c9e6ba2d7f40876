#pragma once

// Query-guided refinement of clip features followed by clip-to-word
// cross-attention, producing the joint features consumed by both task heads.

#include "mrhd/align.hpp"
#include "mrhd/nn.hpp"

namespace mrhd {

struct RefineParams {
  Linear sim_visual;  // d -> d
  Linear sim_text;    // d -> d
  Linear fuse;        // 5d -> d
  Linear query, key, value;
  LayerNorm fusion_norm;

  RefineParams() = default;
  RefineParams(std::size_t d, Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct CrossSimilarity {
  Tensor a;      // [L x N]
  Tensor a_row;  // rows sum to 1
  Tensor a_col;  // columns sum to 1
};

struct JointFeatures {
  Tensor z;          // [L x d]
  Tensor attention;  // [L x N] clip-to-word weights
};

CrossSimilarity cross_similarity(const ProjectedFeatures& p, const RefineParams& params);

struct AttendedFeatures {
  Tensor v2q;  // A_r t_hat
  Tensor q2v;  // A_r A_c^T v_hat
};

AttendedFeatures bidirectional_attend(const CrossSimilarity& cs, const ProjectedFeatures& p);

// [v | v2q | v*v2q | v*q2v | mean(t) repeated] -> linear -> [L x d].
Tensor fuse(const ProjectedFeatures& p, const AttendedFeatures& att, const RefineParams& params);

// softmax(Q K^T / sqrt(d)) V with Q from refined clips and K, V from words.
// Unless `raw`, the refined clips are added back and layer-normed.
JointFeatures cross_attention_fusion(const Tensor& refined, const Tensor& t_hat,
                                     const RefineParams& params, bool raw = false);

// Adds sinusoidal positions to the clip features used by the stage.
ProjectedFeatures with_positions(const ProjectedFeatures& p);

// Full stage: positions, similarity, attend, fuse, cross-attention.
JointFeatures refine(const ProjectedFeatures& p, const RefineParams& params, bool raw = false);

}  // namespace mrhd
