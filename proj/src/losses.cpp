#include "mrhd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "mrhd/align.hpp"
#include "mrhd/error.hpp"

namespace mrhd {

MatchResult hungarian_match(const CostMatrix& cost) {
  const std::size_t M = cost.size();
  const std::size_t G = M ? cost.front().size() : 0;
  for (const auto& row : cost) {
    if (row.size() != G) throw ContractError("hungarian_match: ragged cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) throw ContractError("hungarian_match: non-finite cost");
  }
  if (G > M)
    throw ContractError("hungarian_match: " + std::to_string(G) + " ground truths exceed " +
                        std::to_string(M) + " predictions");
  MatchResult result;
  if (G == 0) {
    for (std::size_t i = 0; i < M; ++i) result.unmatched.push_back(i);
    return result;
  }
  // Rows are ground truths (1..G), columns predictions (1..M); 0 is a sentinel.
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(G + 1, 0.0), v(M + 1, 0.0);
  std::vector<std::size_t> owner(M + 1, 0), way(M + 1, 0);
  for (std::size_t row = 1; row <= G; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(M + 1, kInf);
    std::vector<char> used(M + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t r = owner[col0];
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= M; ++j) {
        if (used[j]) continue;
        const double cur = cost[j - 1][r - 1] - u[r] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = col0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= M; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  for (std::size_t j = 1; j <= M; ++j) {
    if (owner[j] != 0) {
      result.pairs.emplace_back(j - 1, owner[j] - 1);
      result.cost += cost[j - 1][owner[j] - 1];
    } else {
      result.unmatched.push_back(j - 1);
    }
  }
  return result;
}

double interval_giou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::max(0.0, std::min(a_end, b_end) - std::max(a_start, b_start));
  const double uni = (a_end - a_start) + (b_end - b_start) - inter;
  const double hull = std::max(a_end, b_end) - std::min(a_start, b_start);
  if (!(uni > 0.0) || !(hull > 0.0)) throw ContractError("interval_giou: degenerate intervals");
  return inter / uni - (hull - uni) / hull;
}

std::vector<std::pair<double, double>> normalized_windows(const QuerySample& sample) {
  std::vector<std::pair<double, double>> out;
  for (const auto& [start, end] : sample.relevant_windows) {
    const double width = (end - start) / sample.duration;
    if (!(width > 0.0)) throw ContractError("ground-truth window has zero width");
    out.emplace_back(0.5 * (start + end) / sample.duration, width);
  }
  return out;
}

CostMatrix span_cost_matrix(const DecoderOutput& out,
                            const std::vector<std::pair<double, double>>& gts,
                            const LossWeights& w) {
  const std::size_t M = out.scores.numel();
  CostMatrix cost(M, std::vector<double>(gts.size()));
  for (std::size_t i = 0; i < M; ++i) {
    const double c = out.spans.at(i, 0), wd = out.spans.at(i, 1);
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const auto [gc, gw] = gts[g];
      if (!(gw > 0.0)) throw ContractError("ground-truth window has zero width");
      const double l1 = std::fabs(c - gc) + std::fabs(wd - gw);
      const double giou = interval_giou(c - 0.5 * wd, c + 0.5 * wd, gc - 0.5 * gw, gc + 0.5 * gw);
      cost[i][g] = w.l1 * l1 + w.giou * (1.0 - giou) - w.cls * out.scores.at(i);
    }
  }
  return cost;
}

MomentLoss moment_loss(const DecoderOutput& out, const std::vector<std::pair<double, double>>& gts,
                       const LossWeights& w) {
  if (gts.empty()) throw ContractError("moment_loss: no ground-truth windows");
  MomentLoss result;
  result.match = hungarian_match(span_cost_matrix(out, gts, w));

  std::vector<std::size_t> pred_idx;
  std::vector<double> gt_cw, gt_start, gt_end, gt_width;
  for (const auto& [p, g] : result.match.pairs) {
    pred_idx.push_back(p);
    const auto [gc, gw] = gts[g];
    gt_cw.push_back(gc);
    gt_cw.push_back(gw);
    gt_start.push_back(gc - 0.5 * gw);
    gt_end.push_back(gc + 0.5 * gw);
    gt_width.push_back(gw);
  }
  const std::size_t K = pred_idx.size();
  const Tensor matched = gather(out.spans, pred_idx);  // [K x 2]
  const Tensor l1 = scale(sum(abs(matched - Tensor::from({K, 2}, gt_cw))), 1.0 / K);

  const Tensor center = reshape(slice(matched, 1, 0, 1), {K});
  const Tensor width = reshape(slice(matched, 1, 1, 2), {K});
  const Tensor start = center - scale(width, 0.5);
  const Tensor end = center + scale(width, 0.5);
  const Tensor gs = Tensor::vector(gt_start), ge = Tensor::vector(gt_end);
  const Tensor inter = relu(minimum(end, ge) - maximum(start, gs));
  const Tensor uni = width + Tensor::vector(gt_width) - inter;
  const Tensor hull = maximum(end, ge) - minimum(start, gs);
  const Tensor giou = div(inter, uni) - div(hull - uni, hull);
  const Tensor giou_term = scale(sum(add_scalar(neg(giou), 1.0)), 1.0 / K);

  std::vector<double> targets(out.scores.numel(), 0.0);
  for (std::size_t p : pred_idx) targets[p] = 1.0;
  const Tensor cls = mean(binary_cross_entropy(out.scores, targets));

  result.loss = scale(l1, w.l1) + scale(giou_term, w.giou) + scale(cls, w.cls);
  return result;
}

SaliencyPairs saliency_pairs(const QuerySample& sample, std::size_t max_pairs, std::uint64_t seed,
                             double min_gap) {
  const auto ratings = mean_ratings(sample);
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < ratings.size(); ++i) {
    if (!ratings[i]) continue;
    for (std::size_t j = 0; j < ratings.size(); ++j) {
      if (!ratings[j]) continue;
      const double gap = *ratings[i] - *ratings[j];
      if (gap > 0.0 && gap >= min_gap) all.emplace_back(i, j);
    }
  }
  if (all.size() > max_pairs) {
    Rng rng(seed);
    for (std::size_t k = 0; k < max_pairs; ++k) {
      const std::size_t pick = k + static_cast<std::size_t>(rng() % (all.size() - k));
      std::swap(all[k], all[pick]);
    }
    all.resize(max_pairs);
  }
  SaliencyPairs pairs;
  for (const auto& [hi, lo] : all) {
    pairs.high.push_back(hi);
    pairs.low.push_back(lo);
  }
  return pairs;
}

Tensor saliency_hinge(const Tensor& scores, const SaliencyPairs& pairs, double margin) {
  if (pairs.size() == 0) return Tensor::scalar(0.0);
  const Tensor gap = gather(scores, pairs.low) - gather(scores, pairs.high);
  return mean(relu(add_scalar(gap, margin)));
}

Tensor saliency_loss(const Tensor& h, const Tensor& h_bar, const SaliencyPairs& pairs,
                     double margin) {
  return saliency_hinge(h, pairs, margin) + saliency_hinge(h_bar, pairs, margin);
}

Tensor total_loss(const Tensor& mom, const Tensor& high, const Tensor& local, const Tensor& global,
                  double lambda_lg) {
  for (const Tensor* t : {&mom, &high, &local, &global})
    if (t->numel() != 1) throw DimensionError("total_loss: parts must be scalars");
  auto as_scalar = [](const Tensor& t) { return t.rank() == 0 ? t : reshape(t, {}); };
  return as_scalar(mom) + as_scalar(high) + scale(as_scalar(local) + as_scalar(global), lambda_lg);
}

}  // namespace mrhd
