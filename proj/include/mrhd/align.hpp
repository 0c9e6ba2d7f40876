#pragma once

// Local-global multi-modal alignment: projection MLPs, clip-word cosine
// similarity, the local BCE regularizer and the batch contrastive regularizer.

#include <vector>

#include "mrhd/data.hpp"
#include "mrhd/nn.hpp"
#include "mrhd/tensor.hpp"

namespace mrhd {

struct AlignParams {
  Mlp3 visual_mlp;  // (d_v + d_a) -> d
  Mlp3 text_mlp;    // d_t -> d

  AlignParams() = default;
  AlignParams(std::size_t visual_dim, std::size_t text_dim, std::size_t d, Rng& rng);
  void collect(const std::string& prefix, NamedParams& out) const;
};

struct ProjectedFeatures {
  Tensor v_hat;  // [L x d]
  Tensor t_hat;  // [N x d]
};

ProjectedFeatures project(const Tensor& visual, const Tensor& text, const AlignParams& params);
ProjectedFeatures project(const FeatureBundle& bundle, const AlignParams& params);

// Row-wise cosine similarity [rows(a) x rows(b)]; norms are offset by 1e-8.
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

struct LocalSimilarity {
  Tensor s_loc;  // [L x N], sigmoid of clip-word cosine
  Tensor s_hat;  // [L], mean over words
};

LocalSimilarity local_similarity(const ProjectedFeatures& p);

// Elementwise binary cross-entropy with log arguments clamped to
// [1e-12, 1 - 1e-12]. Same shape as `probs`.
Tensor binary_cross_entropy(const Tensor& probs, const std::vector<double>& targets);

// Summed (not averaged) BCE between clip scores and clip relevance labels.
Tensor local_loss(const Tensor& s_hat, const std::vector<int>& labels);

// Batch contrastive loss with a single normalizer shared by all anchors:
//   -(1/B) sum_i log( exp(v_i.t_i / T) / sum_{i,j} exp(v_i.t_j / T) ).
Tensor global_loss(const Tensor& v_globals, const Tensor& t_globals, double temperature = 1.0);

}  // namespace mrhd
