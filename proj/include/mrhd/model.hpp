#pragma once

// Full model: alignment -> refinement -> task cooperation.

#include <cstdint>
#include <utility>

#include "mrhd/align.hpp"
#include "mrhd/cooperate.hpp"
#include "mrhd/data.hpp"
#include "mrhd/losses.hpp"
#include "mrhd/refine.hpp"

namespace mrhd {

struct ModelConfig {
  std::size_t visual_dim = 0;  // d_v + d_a
  std::size_t text_dim = 0;
  std::size_t d = 256;
  std::size_t num_queries = 10;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  bool raw_eq11 = false;  // bare cross-attention output, no residual or norm
};

// Copies share parameter storage; build a new Model for independent weights.
struct Model {
  ModelConfig config;
  AlignParams align;
  RefineParams refine;
  CooperateParams cooperate;

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);
  NamedParams parameters() const;
};

// Which call site of the shared self-attention block carries gradient.
enum class SharedPath { kBoth, kHighlightOnly, kHd2mrOnly };

struct ForwardOptions {
  SharedPath shared = SharedPath::kBoth;
};

struct ForwardResult {
  ProjectedFeatures projected;
  LocalSimilarity local;
  JointFeatures joint;
  Tensor h;      // initial highlight scores [L]
  Tensor z_hat;  // highlight-aware features [L x d]
  DecoderOutput decoder;
  std::pair<std::size_t, std::size_t> moment_range;
  Tensor h_bar;  // refined highlight scores [L]
  MomentPrediction prediction;
};

ForwardResult forward(const Model& model, const Example& example, const ForwardOptions& options = {});

struct LossSettings {
  LossWeights weights;
  double lambda_lg = 0.3;
  double temperature = 1.0;
  double saliency_margin = 0.2;
  std::size_t max_saliency_pairs = 16;
  double saliency_min_gap = 0.0;
};

struct LossTerms {
  Tensor mom, high, local, global, total;
  LossBreakdown breakdown;
  std::vector<MomentPrediction> predictions;  // batch order
};

// Per-sample terms averaged over the batch; the contrastive term consumes
// the whole batch's pooled features. `pair_seed` drives saliency sampling.
LossTerms batch_loss(const Model& model, const std::vector<const Example*>& batch,
                     const LossSettings& settings, std::uint64_t pair_seed,
                     const ForwardOptions& options = {});

// Single-sample forward in training mode: prediction plus loss breakdown.
std::pair<MomentPrediction, LossBreakdown> forward_train(const Model& model, const Example& example,
                                                         const LossSettings& settings,
                                                         std::uint64_t pair_seed);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace mrhd
