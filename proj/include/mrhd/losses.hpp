#pragma once

// Set-prediction matching and the training objective.

#include <cstdint>
#include <utility>
#include <vector>

#include "mrhd/cooperate.hpp"
#include "mrhd/data.hpp"
#include "mrhd/tensor.hpp"

namespace mrhd {

using CostMatrix = std::vector<std::vector<double>>;  // [predictions][ground truths]

struct MatchResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  // (prediction, ground truth)
  std::vector<std::size_t> unmatched;                      // prediction indices
  double cost = 0.0;
};

// Minimum-cost one-to-one assignment of every ground truth to a distinct
// prediction (Kuhn-Munkres with potentials, O(G^2 M)). Requires G <= M.
MatchResult hungarian_match(const CostMatrix& cost);

struct LossWeights {
  double l1 = 10.0;
  double giou = 1.0;
  double cls = 4.0;
  double saliency = 1.0;
};

// Generalized IoU of two 1-D intervals: IoU - (hull - union) / hull.
double interval_giou(double a_start, double a_end, double b_start, double b_end);

// Ground-truth windows as normalized (center, width).
std::vector<std::pair<double, double>> normalized_windows(const QuerySample& sample);

CostMatrix span_cost_matrix(const DecoderOutput& out,
                            const std::vector<std::pair<double, double>>& gts,
                            const LossWeights& w);

struct MomentLoss {
  Tensor loss;
  MatchResult match;
};

// L1 + (1 - gIoU) over matched pairs (averaged over ground truths) plus
// foreground BCE over all predictions (averaged over predictions).
MomentLoss moment_loss(const DecoderOutput& out, const std::vector<std::pair<double, double>>& gts,
                       const LossWeights& w);

struct SaliencyPairs {
  std::vector<std::size_t> high;
  std::vector<std::size_t> low;
  std::size_t size() const { return high.size(); }
};

// All (high, low) clip pairs with mean(high) > mean(low) and a difference of
// at least min_gap, subsampled to max_pairs with a seeded partial shuffle.
SaliencyPairs saliency_pairs(const QuerySample& sample, std::size_t max_pairs, std::uint64_t seed,
                             double min_gap = 0.0);

// Mean over pairs of max(0, margin + s[low] - s[high]); zero without pairs.
Tensor saliency_hinge(const Tensor& scores, const SaliencyPairs& pairs, double margin = 0.2);

// Hinge applied to both the initial and the refined highlight scores.
Tensor saliency_loss(const Tensor& h, const Tensor& h_bar, const SaliencyPairs& pairs,
                     double margin = 0.2);

struct LossBreakdown {
  double mom = 0.0;
  double high = 0.0;
  double local = 0.0;
  double global = 0.0;
  double total = 0.0;
  double lambda_lg = 0.0;
};

// mom + high + lambda_lg * (local + global).
Tensor total_loss(const Tensor& mom, const Tensor& high, const Tensor& local, const Tensor& global,
                  double lambda_lg);

}  // namespace mrhd
