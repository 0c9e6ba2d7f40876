#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mrhd/tensor.hpp"

namespace mrhd {

// Ground truth for one query. Saliency is dense: saliency[clip][annotator],
// ratings in 0..4 or -1 for an unannotated clip.
struct QuerySample {
  std::int64_t qid = 0;
  std::string vid;
  std::string query_text;
  double duration = 0.0;
  double clip_len = 2.0;
  std::vector<std::pair<double, double>> relevant_windows;
  std::vector<std::vector<int>> saliency;

  std::size_t num_clips() const;
  std::size_t num_annotators() const { return saliency.empty() ? 0 : saliency.front().size(); }
};

// Number of clips covering `duration` seconds.
std::size_t clip_count(double duration, double clip_len);

struct FeatureBundle {
  Tensor visual;  // [L x d_v]
  Tensor audio;   // [L x d_a], undefined when absent
  Tensor text;    // [N x d_t]

  bool has_audio() const { return audio.defined(); }
  // Per-clip channel concatenation [L x (d_v + d_a)].
  Tensor effective_visual() const;
  std::size_t visual_width() const;
};

struct Example {
  QuerySample sample;
  FeatureBundle features;
};

struct Dataset {
  std::vector<Example> examples;
  std::size_t size() const { return examples.size(); }
};

// Throws ValidationError naming the violated invariant.
void validate_sample(const QuerySample& sample);
void validate_example(const Example& example);

// One JSON-Lines annotation record.
QuerySample parse_annotation(const std::string& line, std::size_t line_number = 0);
std::string format_annotation(const QuerySample& sample);

// Binary feature matrices: magic "FEATB1\0\0", LE uint32 rows, LE uint32
// cols, then rows*cols LE float32 row-major.
Tensor read_feature_file(const std::filesystem::path& path);
void write_feature_file(const std::filesystem::path& path, const Tensor& matrix);
Tensor decode_features(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_features(const Tensor& matrix);

// Loads annotations and pairs each record with <vid>.vfeat, optional
// <vid>.afeat and <qid>.tfeat from feature_dir.
Dataset load_dataset(const std::filesystem::path& annotations_path,
                     const std::filesystem::path& feature_dir);
void write_dataset(const Dataset& dataset, const std::filesystem::path& annotations_path,
                   const std::filesystem::path& feature_dir);

// Directory layout used by the CLI: <dir>/annotations.jsonl, <dir>/features/.
Dataset load_dataset_dir(const std::filesystem::path& dir);
void write_dataset_dir(const Dataset& dataset, const std::filesystem::path& dir);

// Clip i is relevant iff it overlaps some window by more than half a clip.
std::vector<int> clip_labels(const QuerySample& sample);

// Mean rating per clip over annotators, ignoring -1; nullopt if unannotated.
std::vector<std::optional<double>> mean_ratings(const QuerySample& sample);

struct SynthConfig {
  std::size_t num_samples = 16;
  std::size_t num_clips = 16;
  std::size_t num_words = 8;
  std::size_t visual_dim = 32;
  std::size_t text_dim = 32;
  std::size_t audio_dim = 0;  // 0 disables audio
  double clip_len = 2.0;
  std::size_t min_window_clips = 2;
  std::size_t max_window_clips = 6;
  double noise = 0.1;
  std::size_t num_annotators = 3;
};

// Deterministic in seed. Clips inside the planted window carry the query
// centroid scaled by their base rating; the window's peak clip is rated 4 by
// every annotator.
Dataset synth_generate(const SynthConfig& config, std::uint64_t seed);

}  // namespace mrhd
