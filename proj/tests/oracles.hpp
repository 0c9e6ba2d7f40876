#pragma once

// Reference implementations used only by tests. Each one is written from the
// definition, with no code shared with the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "mrhd/data.hpp"
#include "mrhd/prediction.hpp"
#include "mrhd/tensor.hpp"

namespace oracle {

// Central differences of a scalar function of one leaf's values.
template <class F>
std::vector<double> finite_diff(F&& f, mrhd::Tensor leaf, double h = 1e-5) {
  auto values = leaf.mutable_data();
  std::vector<double> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double keep = values[i];
    values[i] = keep + h;
    const double up = f();
    values[i] = keep - h;
    const double down = f();
    values[i] = keep;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

inline double max_relative(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, scale = 1e-8;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

// Minimum total cost of assigning every column to a distinct row.
inline double exhaustive_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t rows = cost.size();
  const std::size_t cols = rows ? cost[0].size() : 0;
  std::vector<std::size_t> perm(rows);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t g = 0; g < cols; ++g) total += cost[perm[g]][g];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

inline double iou(double s0, double e0, double s1, double e1) {
  const double inter = std::max(0.0, std::min(e0, e1) - std::max(s0, s1));
  return inter / ((e0 - s0) + (e1 - s1) - inter);
}

// AP from a ranked hit list: each hit contributes the best precision reached
// at its rank or deeper, counted directly, divided by the positive count.
inline double average_precision(const std::vector<bool>& ranked_hits, std::size_t positives) {
  if (positives == 0) return 0.0;
  double total = 0.0;
  for (std::size_t k = 0; k < ranked_hits.size(); ++k) {
    if (!ranked_hits[k]) continue;
    double best = 0.0;
    for (std::size_t j = k; j < ranked_hits.size(); ++j) {
      const auto tp = std::count(ranked_hits.begin(), ranked_hits.begin() + j + 1, true);
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(j + 1));
    }
    total += best;
  }
  return total / static_cast<double>(positives);
}

// Predictions in score order each claim the best-overlapping free ground
// truth at or above the threshold.
inline double detection_ap(std::vector<mrhd::Span> preds,
                           const std::vector<std::pair<double, double>>& gts, double threshold) {
  std::stable_sort(preds.begin(), preds.end(),
                   [](const mrhd::Span& a, const mrhd::Span& b) { return a.score > b.score; });
  std::vector<bool> taken(gts.size(), false), hits;
  for (const mrhd::Span& p : preds) {
    int choice = -1;
    double choice_iou = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(p.start, p.end, gts[g].first, gts[g].second);
      if (v >= threshold && v > choice_iou) {
        choice = static_cast<int>(g);
        choice_iou = v;
      }
    }
    if (choice >= 0) {
      taken[choice] = true;
      hits.push_back(true);
    } else {
      hits.push_back(false);
    }
  }
  return average_precision(hits, gts.size());
}

inline std::vector<double> thresholds() {
  return {0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95};
}

struct MapTriple {
  double at050 = 0.0, at075 = 0.0, avg = 0.0;
};

inline MapTriple mr_map(const std::vector<std::vector<mrhd::Span>>& preds,
                        const std::vector<std::vector<std::pair<double, double>>>& gts) {
  MapTriple out;
  const auto ts = thresholds();
  for (std::size_t t = 0; t < ts.size(); ++t) {
    double sum = 0.0;
    for (std::size_t q = 0; q < preds.size(); ++q) sum += oracle::detection_ap(preds[q], gts[q], ts[t]);
    const double m = sum / static_cast<double>(preds.size());
    if (t == 0) out.at050 = m;
    if (t == 5) out.at075 = m;
    out.avg += m / static_cast<double>(ts.size());
  }
  return out;
}

// Clip indices by descending score; equal scores keep index order.
inline std::vector<std::size_t> ranking(const std::vector<double>& scores) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j + 1 < idx.size() - i; ++j)
      if (scores[idx[j + 1]] > scores[idx[j]]) std::swap(idx[j], idx[j + 1]);
  return idx;
}

struct Highlight {
  std::optional<double> map, hit, top5;
};

inline Highlight highlight(const std::vector<double>& scores, const mrhd::QuerySample& s) {
  const auto order = ranking(scores);
  const std::size_t annotators = s.saliency.empty() ? 0 : s.saliency[0].size();
  double map = 0.0, hit = 0.0, top5 = 0.0;
  std::size_t used = 0;
  for (std::size_t a = 0; a < annotators; ++a) {
    std::vector<bool> ranked;
    for (std::size_t i : order) ranked.push_back(s.saliency[i][a] == 4);
    const auto positives = static_cast<std::size_t>(std::count(ranked.begin(), ranked.end(), true));
    if (positives == 0) continue;
    ++used;
    map += average_precision(ranked, positives);
    hit += ranked[0] ? 1.0 : 0.0;
    const std::vector<bool> head(ranked.begin(), ranked.begin() + std::min<std::size_t>(5, ranked.size()));
    top5 += average_precision(head, static_cast<std::size_t>(std::count(head.begin(), head.end(), true)));
  }
  if (used == 0) return {};
  const double n = static_cast<double>(used);
  return {map / n, hit / n, top5 / n};
}

// Random saliency with ratings in {-1, 0..4}.
inline mrhd::QuerySample random_sample(std::mt19937_64& rng, std::size_t clips, std::size_t annotators) {
  mrhd::QuerySample s;
  s.clip_len = 2.0;
  s.duration = 2.0 * static_cast<double>(clips);
  s.relevant_windows = {{0.0, 2.0}};
  s.saliency.assign(clips, std::vector<int>(annotators, 0));
  for (auto& row : s.saliency)
    for (int& r : row) r = static_cast<int>(rng() % 6) - 1;
  return s;
}

}  // namespace oracle
