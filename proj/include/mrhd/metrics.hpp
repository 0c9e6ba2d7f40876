#pragma once

// Moment-retrieval and highlight-detection evaluation.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrhd/data.hpp"
#include "mrhd/prediction.hpp"

namespace mrhd {

using Window = std::pair<double, double>;

struct EvalReport {
  double r1_050 = 0.0;
  double r1_070 = 0.0;
  double map_050 = 0.0;
  double map_075 = 0.0;
  double map_avg = 0.0;
  std::optional<double> hd_map;
  std::optional<double> hit_at_1;
  std::optional<double> top5_map;

  bool operator==(const EvalReport&) const = default;
};

std::string report_to_json(const EvalReport& report, int indent = -1);
EvalReport report_from_json(const std::string& text);

double temporal_iou(const Window& a, const Window& b);

// Fraction of queries whose top-scored span reaches IoU >= threshold with
// any ground-truth window.
double recall_at_1(const std::vector<std::vector<Span>>& preds,
                   const std::vector<std::vector<Window>>& gts, double threshold);

// All-points interpolated AP of a ranked hit list with `num_positives`
// positives in total.
double interpolated_ap(const std::vector<bool>& hits, std::size_t num_positives);

// Detection AP of one query at one IoU threshold; each ground truth can be
// claimed once, greedily in score order.
double detection_ap(const std::vector<Span>& preds, const std::vector<Window>& gts,
                    double threshold);

std::vector<double> map_thresholds();  // 0.50, 0.55, ..., 0.95

struct MapResult {
  double map_050 = 0.0;
  double map_075 = 0.0;
  double average = 0.0;
};

MapResult mr_map(const std::vector<std::vector<Span>>& preds,
                 const std::vector<std::vector<Window>>& gts);

// Clip indices ordered by descending score; ties keep clip order.
std::vector<std::size_t> rank_clips(const std::vector<double>& scores);

struct HighlightResult {
  std::optional<double> map;
  std::optional<double> hit_at_1;
};

// Per-annotator AP and HIT@1 with positives = rating 4, averaged over
// annotators that have at least one positive. Absent if none do.
HighlightResult hd_metrics(const std::vector<double>& scores, const QuerySample& sample);

// AP over the five best-scored clips (all clips when L < 5), per annotator.
std::optional<double> top5_map(const std::vector<double>& scores, const QuerySample& sample);

// Matches predictions to samples by qid and reduces in qid order.
EvalReport evaluate(const std::vector<MomentPrediction>& preds,
                    const std::vector<QuerySample>& samples);
EvalReport evaluate(const std::vector<MomentPrediction>& preds, const Dataset& dataset);

}  // namespace mrhd
