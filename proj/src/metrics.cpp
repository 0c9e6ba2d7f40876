#include "mrhd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "json.hpp"

#include "mrhd/error.hpp"

namespace mrhd {

namespace {

using json = nlohmann::json;

constexpr int kVeryGood = 4;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

std::optional<double> average(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// positives[a][i]: annotator a rates clip i "Very Good".
std::vector<std::vector<bool>> annotator_positives(const QuerySample& sample) {
  const std::size_t A = sample.num_annotators();
  std::vector<std::vector<bool>> out(A, std::vector<bool>(sample.saliency.size(), false));
  for (std::size_t i = 0; i < sample.saliency.size(); ++i)
    for (std::size_t a = 0; a < A; ++a) out[a][i] = sample.saliency[i][a] == kVeryGood;
  return out;
}

void check_scores(const std::vector<double>& scores, const QuerySample& sample) {
  if (scores.size() != sample.saliency.size())
    throw ContractError("qid " + std::to_string(sample.qid) + ": " +
                        std::to_string(scores.size()) + " highlight scores for " +
                        std::to_string(sample.saliency.size()) + " clips");
}

}  // namespace

std::string report_to_json(const EvalReport& r, int indent) {
  json j = {{"r1_050", r.r1_050},
            {"r1_070", r.r1_070},
            {"map_050", r.map_050},
            {"map_075", r.map_075},
            {"map_avg", r.map_avg},
            {"hd_map", optional_json(r.hd_map)},
            {"hit_at_1", optional_json(r.hit_at_1)},
            {"top5_map", optional_json(r.top5_map)}};
  return j.dump(indent);
}

EvalReport report_from_json(const std::string& text) {
  const json j = json::parse(text);
  EvalReport r;
  r.r1_050 = j.at("r1_050").get<double>();
  r.r1_070 = j.at("r1_070").get<double>();
  r.map_050 = j.at("map_050").get<double>();
  r.map_075 = j.at("map_075").get<double>();
  r.map_avg = j.at("map_avg").get<double>();
  r.hd_map = optional_from(j, "hd_map");
  r.hit_at_1 = optional_from(j, "hit_at_1");
  r.top5_map = optional_from(j, "top5_map");
  return r;
}

double temporal_iou(const Window& a, const Window& b) {
  if (!(a.second > a.first) || !(b.second > b.first))
    throw ContractError("temporal_iou: zero-length interval");
  const double inter = std::max(0.0, std::min(a.second, b.second) - std::max(a.first, b.first));
  const double uni = (a.second - a.first) + (b.second - b.first) - inter;
  return inter / uni;
}

double recall_at_1(const std::vector<std::vector<Span>>& preds,
                   const std::vector<std::vector<Window>>& gts, double threshold) {
  if (preds.size() != gts.size()) throw ContractError("recall_at_1: query count mismatch");
  if (preds.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < preds.size(); ++q) {
    if (preds[q].empty()) throw ContractError("recall_at_1: empty prediction list");
    if (gts[q].empty()) throw ContractError("recall_at_1: query without ground truth");
    const auto top = std::max_element(preds[q].begin(), preds[q].end(),
                                      [](const Span& a, const Span& b) { return a.score < b.score; });
    const Window w{top->start, top->end};
    if (!(w.second > w.first)) continue;  // a collapsed span overlaps nothing
    for (const Window& g : gts[q]) {
      if (temporal_iou(w, g) >= threshold) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double interpolated_ap(const std::vector<bool>& hits, std::size_t num_positives) {
  if (num_positives == 0) return 0.0;
  std::vector<double> precision(hits.size());
  std::size_t tp = 0;
  for (std::size_t k = 0; k < hits.size(); ++k) {
    tp += hits[k] ? 1 : 0;
    precision[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
  }
  for (std::size_t k = hits.size(); k-- > 1;)
    precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  for (std::size_t k = 0; k < hits.size(); ++k)
    if (hits[k]) ap += precision[k];
  return ap / static_cast<double>(num_positives);
}

double detection_ap(const std::vector<Span>& preds, const std::vector<Window>& gts,
                    double threshold) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  std::vector<bool> claimed(gts.size(), false), hits;
  for (std::size_t idx : order) {
    const Span& p = preds[idx];
    bool hit = false;
    if (p.end > p.start) {
      std::vector<std::pair<double, std::size_t>> ious;
      for (std::size_t g = 0; g < gts.size(); ++g)
        ious.emplace_back(temporal_iou({p.start, p.end}, gts[g]), g);
      std::stable_sort(ious.begin(), ious.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (const auto& [iou, g] : ious) {
        if (iou < threshold) break;
        if (!claimed[g]) {
          claimed[g] = true;
          hit = true;
          break;
        }
      }
    }
    hits.push_back(hit);
  }
  return interpolated_ap(hits, gts.size());
}

std::vector<double> map_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.5 + 0.05 * i);
  return t;
}

MapResult mr_map(const std::vector<std::vector<Span>>& preds,
                 const std::vector<std::vector<Window>>& gts) {
  if (preds.size() != gts.size()) throw ContractError("mr_map: query count mismatch");
  MapResult r;
  if (preds.empty()) return r;
  const auto thresholds = map_thresholds();
  std::vector<double> per_threshold(thresholds.size(), 0.0);
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    double total = 0.0;
    for (std::size_t q = 0; q < preds.size(); ++q) total += detection_ap(preds[q], gts[q], thresholds[t]);
    per_threshold[t] = total / static_cast<double>(preds.size());
  }
  r.map_050 = per_threshold[0];
  r.map_075 = per_threshold[5];
  r.average = std::accumulate(per_threshold.begin(), per_threshold.end(), 0.0) /
              static_cast<double>(per_threshold.size());
  return r;
}

std::vector<std::size_t> rank_clips(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

HighlightResult hd_metrics(const std::vector<double>& scores, const QuerySample& sample) {
  check_scores(scores, sample);
  const auto order = rank_clips(scores);
  std::vector<double> aps, hits;
  for (const auto& positives : annotator_positives(sample)) {
    const auto count = static_cast<std::size_t>(std::count(positives.begin(), positives.end(), true));
    if (count == 0) continue;
    std::vector<bool> ranked;
    for (std::size_t i : order) ranked.push_back(positives[i]);
    aps.push_back(interpolated_ap(ranked, count));
    hits.push_back(ranked.front() ? 1.0 : 0.0);
  }
  return {average(aps), average(hits)};
}

std::optional<double> top5_map(const std::vector<double>& scores, const QuerySample& sample) {
  check_scores(scores, sample);
  const auto order = rank_clips(scores);
  const std::size_t k = std::min<std::size_t>(5, order.size());
  std::vector<double> aps;
  for (const auto& positives : annotator_positives(sample)) {
    if (std::none_of(positives.begin(), positives.end(), [](bool b) { return b; })) continue;
    std::vector<bool> ranked;
    for (std::size_t r = 0; r < k; ++r) ranked.push_back(positives[order[r]]);
    const auto in_top = static_cast<std::size_t>(std::count(ranked.begin(), ranked.end(), true));
    aps.push_back(interpolated_ap(ranked, in_top));
  }
  return average(aps);
}

EvalReport evaluate(const std::vector<MomentPrediction>& preds,
                    const std::vector<QuerySample>& samples) {
  std::map<std::int64_t, const MomentPrediction*> by_qid;
  for (const auto& p : preds) by_qid[p.qid] = &p;
  std::vector<const QuerySample*> ordered;
  for (const auto& s : samples) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const QuerySample* a, const QuerySample* b) { return a->qid < b->qid; });

  std::vector<std::vector<Span>> spans;
  std::vector<std::vector<Window>> windows;
  std::vector<double> hd_maps, hits, top5s;
  for (const QuerySample* s : ordered) {
    const auto it = by_qid.find(s->qid);
    if (it == by_qid.end()) throw ContractError("no prediction for qid " + std::to_string(s->qid));
    spans.push_back(it->second->spans);
    windows.push_back(s->relevant_windows);
    const auto hd = hd_metrics(it->second->highlight, *s);
    if (hd.map) hd_maps.push_back(*hd.map);
    if (hd.hit_at_1) hits.push_back(*hd.hit_at_1);
    if (const auto t5 = top5_map(it->second->highlight, *s)) top5s.push_back(*t5);
  }
  EvalReport r;
  r.r1_050 = recall_at_1(spans, windows, 0.5);
  r.r1_070 = recall_at_1(spans, windows, 0.7);
  const MapResult m = mr_map(spans, windows);
  r.map_050 = m.map_050;
  r.map_075 = m.map_075;
  r.map_avg = m.average;
  r.hd_map = average(hd_maps);
  r.hit_at_1 = average(hits);
  r.top5_map = average(top5s);
  return r;
}

EvalReport evaluate(const std::vector<MomentPrediction>& preds, const Dataset& dataset) {
  std::vector<QuerySample> samples;
  for (const auto& ex : dataset.examples) samples.push_back(ex.sample);
  return evaluate(preds, samples);
}

}  // namespace mrhd
