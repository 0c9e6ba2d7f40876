#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mrhd {

struct Span {
  double start = 0.0;  // seconds
  double end = 0.0;
  double score = 0.0;  // foreground probability
};

// Model output for one query: spans sorted by score (descending) and one
// highlight score per clip.
struct MomentPrediction {
  std::int64_t qid = 0;
  std::vector<Span> spans;
  std::vector<double> highlight;
};

// Submission format, one JSON object per line:
//   {"qid": int, "pred_relevant_windows": [[start, end, score], ...],
//    "pred_saliency_scores": [float, ...]}
std::string format_prediction(const MomentPrediction& p);
MomentPrediction parse_prediction(const std::string& line);
void write_predictions(const std::filesystem::path& path, const std::vector<MomentPrediction>& preds);
std::vector<MomentPrediction> read_predictions(const std::filesystem::path& path);

}  // namespace mrhd
