#include "mrhd/prediction.hpp"

#include <fstream>

#include "json.hpp"

#include "mrhd/error.hpp"

namespace mrhd {

using json = nlohmann::json;

std::string format_prediction(const MomentPrediction& p) {
  json windows = json::array();
  for (const Span& s : p.spans) windows.push_back({s.start, s.end, s.score});
  json j = {{"qid", p.qid}, {"pred_relevant_windows", windows}, {"pred_saliency_scores", p.highlight}};
  return j.dump();
}

MomentPrediction parse_prediction(const std::string& line) {
  MomentPrediction p;
  try {
    const json j = json::parse(line);
    p.qid = j.at("qid").get<std::int64_t>();
    for (const auto& w : j.at("pred_relevant_windows")) {
      if (!w.is_array() || w.size() != 3)
        throw ValidationError("pred_relevant_windows entries must be [start, end, score]");
      p.spans.push_back({w[0].get<double>(), w[1].get<double>(), w[2].get<double>()});
    }
    p.highlight = j.at("pred_saliency_scores").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed prediction: ") + e.what());
  }
  for (std::size_t i = 1; i < p.spans.size(); ++i) {
    if (p.spans[i].score > p.spans[i - 1].score)
      throw ValidationError("qid " + std::to_string(p.qid) + ": windows not score-descending");
  }
  return p;
}

void write_predictions(const std::filesystem::path& path, const std::vector<MomentPrediction>& preds) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  for (const auto& p : preds) out << format_prediction(p) << '\n';
}

std::vector<MomentPrediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<MomentPrediction> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(parse_prediction(line));
    } catch (const ValidationError& e) {
      throw ValidationError(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mrhd
