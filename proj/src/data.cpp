#include "mrhd/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"

#include "mrhd/error.hpp"

namespace mrhd {

namespace {

using json = nlohmann::json;

constexpr char kFeatureMagic[8] = {'F', 'E', 'A', 'T', 'B', '1', '\0', '\0'};
constexpr std::size_t kFeatureHeaderBytes = 16;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double to_float32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace

// ---------------------------------------------------------------------------
// Schema

std::size_t clip_count(double duration, double clip_len) {
  if (!(clip_len > 0.0)) throw ValidationError("clip_len must be positive");
  // Tolerates durations that are an exact multiple up to float noise.
  return static_cast<std::size_t>(std::ceil(duration / clip_len - 1e-9));
}

std::size_t QuerySample::num_clips() const { return clip_count(duration, clip_len); }

Tensor FeatureBundle::effective_visual() const {
  if (!has_audio()) return visual;
  return concat({visual, audio}, 1);
}

std::size_t FeatureBundle::visual_width() const {
  return visual.dim(1) + (has_audio() ? audio.dim(1) : 0);
}

void validate_sample(const QuerySample& s) {
  if (!(s.duration > 0.0) || !std::isfinite(s.duration))
    throw ValidationError("duration must be positive and finite");
  if (!(s.clip_len > 0.0) || !std::isfinite(s.clip_len))
    throw ValidationError("clip_len must be positive and finite");
  if (s.relevant_windows.empty()) throw ValidationError("no relevant windows");
  for (const auto& [start, end] : s.relevant_windows) {
    if (!(start < end)) {
      std::ostringstream os;
      os << "window [" << start << ", " << end << "]: start < end violated";
      throw ValidationError(os.str());
    }
    if (start < 0.0 || end > s.duration) {
      std::ostringstream os;
      os << "window [" << start << ", " << end << "] outside [0, " << s.duration << "]";
      throw ValidationError(os.str());
    }
  }
  const std::size_t L = s.num_clips();
  if (s.saliency.size() != L) {
    throw ValidationError("saliency length " + std::to_string(s.saliency.size()) +
                          " does not match expected L = " + std::to_string(L));
  }
  const std::size_t annotators = s.num_annotators();
  for (std::size_t i = 0; i < L; ++i) {
    if (s.saliency[i].size() != annotators || annotators == 0)
      throw ValidationError("clip " + std::to_string(i) + " has inconsistent annotator count");
    for (int r : s.saliency[i]) {
      if (r < -1 || r > 4)
        throw ValidationError("clip " + std::to_string(i) + " rating " + std::to_string(r) +
                              " outside {-1..4}");
    }
  }
}

void validate_example(const Example& ex) {
  validate_sample(ex.sample);
  const auto& f = ex.features;
  const std::size_t L = ex.sample.num_clips();
  auto finite = [](const Tensor& t) {
    for (double v : t.data())
      if (!std::isfinite(v)) return false;
    return true;
  };
  if (!f.visual.defined() || f.visual.rank() != 2 || f.visual.dim(0) != L)
    throw ValidationError("qid " + std::to_string(ex.sample.qid) + ": visual features need " +
                          std::to_string(L) + " rows");
  if (f.has_audio() && (f.audio.rank() != 2 || f.audio.dim(0) != L))
    throw ValidationError("qid " + std::to_string(ex.sample.qid) + ": audio features need " +
                          std::to_string(L) + " rows");
  if (!f.text.defined() || f.text.rank() != 2 || f.text.dim(0) < 1)
    throw ValidationError("qid " + std::to_string(ex.sample.qid) + ": text needs N >= 1 words");
  if (!finite(f.visual) || !finite(f.text) || (f.has_audio() && !finite(f.audio)))
    throw ValidationError("qid " + std::to_string(ex.sample.qid) + ": non-finite features");
}

QuerySample parse_annotation(const std::string& line, std::size_t line_number) {
  const std::string where = line_number ? "line " + std::to_string(line_number) + ": " : "";
  QuerySample s;
  try {
    const json j = json::parse(line);
    s.qid = j.at("qid").get<std::int64_t>();
    s.vid = j.at("vid").get<std::string>();
    s.query_text = j.value("query", std::string());
    s.duration = j.at("duration").get<double>();
    s.clip_len = j.at("clip_len").get<double>();
    for (const auto& w : j.at("relevant_windows")) {
      if (!w.is_array() || w.size() != 2) throw ValidationError("window must be [start, end]");
      s.relevant_windows.emplace_back(w[0].get<double>(), w[1].get<double>());
    }
    for (const auto& clip : j.at("saliency_scores"))
      s.saliency.push_back(clip.get<std::vector<int>>());
  } catch (const json::exception& e) {
    throw ValidationError(where + "malformed annotation: " + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(where + e.what());
  }
  try {
    validate_sample(s);
  } catch (const ValidationError& e) {
    throw ValidationError(where + "qid " + std::to_string(s.qid) + ": " + e.what());
  }
  return s;
}

std::string format_annotation(const QuerySample& s) {
  json windows = json::array();
  for (const auto& [a, b] : s.relevant_windows) windows.push_back({a, b});
  json j = {{"qid", s.qid},
            {"vid", s.vid},
            {"query", s.query_text},
            {"duration", s.duration},
            {"clip_len", s.clip_len},
            {"relevant_windows", windows},
            {"saliency_scores", s.saliency}};
  return j.dump();
}

// ---------------------------------------------------------------------------
// Feature files

std::vector<std::uint8_t> encode_features(const Tensor& m) {
  if (m.rank() != 2) throw DimensionError("feature matrix must be rank 2, got " + shape_str(m.shape()));
  if (m.dim(0) > std::numeric_limits<std::uint32_t>::max() ||
      m.dim(1) > std::numeric_limits<std::uint32_t>::max())
    throw FormatError("feature matrix too large for uint32 header");
  std::vector<std::uint8_t> out(kFeatureMagic, kFeatureMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(m.dim(0)));
  put_u32(out, static_cast<std::uint32_t>(m.dim(1)));
  out.reserve(out.size() + 4 * m.numel());
  for (double v : m.data()) {
    if (!std::isfinite(v)) throw FormatError("refusing to write non-finite feature value");
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Tensor decode_features(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kFeatureHeaderBytes)
    throw FormatError("truncated header: " + std::to_string(bytes.size()) + " bytes");
  if (std::memcmp(bytes.data(), kFeatureMagic, 8) != 0) throw FormatError("bad magic");
  const std::uint64_t rows = get_u32(bytes.data() + 8);
  const std::uint64_t cols = get_u32(bytes.data() + 12);
  const std::uint64_t count = rows * cols;  // < 2^64 for 32-bit factors
  constexpr std::uint64_t kMaxCount =
      (std::numeric_limits<std::uint64_t>::max() - kFeatureHeaderBytes) / 4;
  if (count > kMaxCount || count > std::numeric_limits<std::size_t>::max() / 8)
    throw FormatError("rows*cols overflows: " + std::to_string(rows) + "x" + std::to_string(cols));
  const std::uint64_t payload = bytes.size() - kFeatureHeaderBytes;
  if (payload < 4 * count)
    throw FormatError("truncated payload: header " + std::to_string(rows) + "x" +
                      std::to_string(cols) + " needs " + std::to_string(count) + " floats, got " +
                      std::to_string(payload / 4));
  if (payload > 4 * count) throw FormatError("trailing bytes after payload");
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i)
    values[i] = std::bit_cast<float>(get_u32(bytes.data() + kFeatureHeaderBytes + 4 * i));
  return Tensor::from({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)},
                      std::move(values));
}

Tensor read_feature_file(const std::filesystem::path& path) {
  try {
    return decode_features(read_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_feature_file(const std::filesystem::path& path, const Tensor& matrix) {
  const auto bytes = encode_features(matrix);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// Dataset persistence

Dataset load_dataset(const std::filesystem::path& annotations_path,
                     const std::filesystem::path& feature_dir) {
  std::ifstream in(annotations_path);
  if (!in) throw LoadError("cannot open annotations " + annotations_path.string());
  Dataset ds;
  std::set<std::int64_t> qids;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Example ex;
    ex.sample = parse_annotation(line, line_number);
    if (!qids.insert(ex.sample.qid).second)
      throw ValidationError("line " + std::to_string(line_number) + ": duplicate qid " +
                            std::to_string(ex.sample.qid));
    const auto vpath = feature_dir / (ex.sample.vid + ".vfeat");
    const auto apath = feature_dir / (ex.sample.vid + ".afeat");
    const auto tpath = feature_dir / (std::to_string(ex.sample.qid) + ".tfeat");
    const std::string who =
        "qid " + std::to_string(ex.sample.qid) + " (vid " + ex.sample.vid + ")";
    if (!std::filesystem::exists(vpath))
      throw LoadError(who + ": missing visual features " + vpath.string());
    if (!std::filesystem::exists(tpath))
      throw LoadError(who + ": missing text features " + tpath.string());
    ex.features.visual = read_feature_file(vpath);
    if (std::filesystem::exists(apath)) ex.features.audio = read_feature_file(apath);
    ex.features.text = read_feature_file(tpath);
    try {
      validate_example(ex);
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

void write_dataset(const Dataset& ds, const std::filesystem::path& annotations_path,
                   const std::filesystem::path& feature_dir) {
  std::filesystem::create_directories(feature_dir);
  if (annotations_path.has_parent_path())
    std::filesystem::create_directories(annotations_path.parent_path());
  std::ofstream out(annotations_path, std::ios::trunc);
  if (!out) throw LoadError("cannot write " + annotations_path.string());
  for (const auto& ex : ds.examples) {
    out << format_annotation(ex.sample) << '\n';
    write_feature_file(feature_dir / (ex.sample.vid + ".vfeat"), ex.features.visual);
    if (ex.features.has_audio())
      write_feature_file(feature_dir / (ex.sample.vid + ".afeat"), ex.features.audio);
    write_feature_file(feature_dir / (std::to_string(ex.sample.qid) + ".tfeat"), ex.features.text);
  }
}

Dataset load_dataset_dir(const std::filesystem::path& dir) {
  return load_dataset(dir / "annotations.jsonl", dir / "features");
}

void write_dataset_dir(const Dataset& ds, const std::filesystem::path& dir) {
  write_dataset(ds, dir / "annotations.jsonl", dir / "features");
}

// ---------------------------------------------------------------------------
// Labels

std::vector<int> clip_labels(const QuerySample& s) {
  const std::size_t L = s.num_clips();
  std::vector<int> labels(L, 0);
  for (std::size_t i = 0; i < L; ++i) {
    const double lo = static_cast<double>(i) * s.clip_len;
    const double hi = lo + s.clip_len;
    for (const auto& [start, end] : s.relevant_windows) {
      const double overlap = std::min(hi, end) - std::max(lo, start);
      if (overlap > 0.5 * s.clip_len) {
        labels[i] = 1;
        break;
      }
    }
  }
  return labels;
}

std::vector<std::optional<double>> mean_ratings(const QuerySample& s) {
  std::vector<std::optional<double>> out;
  out.reserve(s.saliency.size());
  for (const auto& clip : s.saliency) {
    double total = 0.0;
    int n = 0;
    for (int r : clip) {
      if (r >= 0) {
        total += r;
        ++n;
      }
    }
    out.push_back(n ? std::optional<double>(total / n) : std::nullopt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

Dataset synth_generate(const SynthConfig& c, std::uint64_t seed) {
  if (c.num_clips < 2) throw ConfigError("synth: num_clips must be >= 2");
  if (c.num_words < 1) throw ConfigError("synth: num_words must be >= 1");
  if (c.visual_dim == 0 || c.text_dim == 0) throw ConfigError("synth: feature dims must be > 0");
  if (c.min_window_clips < 1 || c.min_window_clips > c.max_window_clips ||
      c.max_window_clips > c.num_clips)
    throw ConfigError("synth: empty window range [" + std::to_string(c.min_window_clips) + ", " +
                      std::to_string(c.max_window_clips) + "] for " +
                      std::to_string(c.num_clips) + " clips");
  if (!(c.clip_len > 0.0)) throw ConfigError("synth: clip_len must be positive");
  if (!(c.noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  if (c.num_annotators < 1) throw ConfigError("synth: num_annotators must be >= 1");

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto uniform_int = [&rng](std::size_t lo, std::size_t hi) {  // inclusive
    return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
  };

  const std::size_t L = c.num_clips;
  const std::size_t centroid_dim = std::max({c.visual_dim, c.text_dim, c.audio_dim});
  Dataset ds;
  for (std::size_t n = 0; n < c.num_samples; ++n) {
    std::vector<double> centroid(centroid_dim);
    for (double& v : centroid) v = gauss(rng);

    const std::size_t width = uniform_int(c.min_window_clips, c.max_window_clips);
    const std::size_t first = uniform_int(0, L - width);
    const std::size_t peak = first + width / 2;

    std::vector<int> base(L);
    for (std::size_t i = 0; i < L; ++i) {
      if (i >= first && i < first + width) {
        const int dist = static_cast<int>(i > peak ? i - peak : peak - i);
        base[i] = std::max(2, 4 - dist);
      } else {
        base[i] = static_cast<int>(rng() % 2);
      }
    }

    auto clip_rows = [&](std::size_t dim) {
      std::vector<double> values(L * dim);
      for (std::size_t i = 0; i < L; ++i) {
        const bool inside = i >= first && i < first + width;
        const double amplitude = base[i] / 4.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double signal = inside ? amplitude * centroid[j] : gauss(rng);
          values[i * dim + j] = to_float32(signal + c.noise * gauss(rng));
        }
      }
      return Tensor::from({L, dim}, std::move(values));
    };

    Example ex;
    ex.features.visual = clip_rows(c.visual_dim);
    if (c.audio_dim > 0) ex.features.audio = clip_rows(c.audio_dim);
    std::vector<double> words(c.num_words * c.text_dim);
    for (std::size_t w = 0; w < c.num_words; ++w)
      for (std::size_t j = 0; j < c.text_dim; ++j)
        words[w * c.text_dim + j] = to_float32(centroid[j] + c.noise * gauss(rng));
    ex.features.text = Tensor::from({c.num_words, c.text_dim}, std::move(words));

    auto& s = ex.sample;
    s.qid = static_cast<std::int64_t>(n);
    s.vid = "synth_v" + std::to_string(n);
    s.query_text = "synthetic query " + std::to_string(n);
    s.clip_len = c.clip_len;
    s.duration = static_cast<double>(L) * c.clip_len;
    s.relevant_windows = {{static_cast<double>(first) * c.clip_len,
                           static_cast<double>(first + width) * c.clip_len}};
    s.saliency.assign(L, std::vector<int>(c.num_annotators));
    for (std::size_t i = 0; i < L; ++i) {
      for (std::size_t a = 0; a < c.num_annotators; ++a) {
        const int jitter = static_cast<int>(rng() % 3) - 1;
        s.saliency[i][a] = i == peak ? 4 : std::clamp(base[i] + jitter, 0, 4);
      }
    }
    ds.examples.push_back(std::move(ex));
  }
  return ds;
}

}  // namespace mrhd
