#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "mrhd/error.hpp"
#include "mrhd/data.hpp"

using namespace mrhd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mrhd_data_" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

QuerySample sample(double duration, double clip_len, std::vector<std::pair<double, double>> windows) {
  QuerySample s;
  s.qid = 1;
  s.vid = "v1";
  s.duration = duration;
  s.clip_len = clip_len;
  s.relevant_windows = std::move(windows);
  s.saliency.assign(clip_count(duration, clip_len), std::vector<int>{0, 1, 2});
  return s;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

// Relevance by direct overlap, clip by clip.
std::vector<int> brute_labels(const QuerySample& s) {
  std::vector<int> out;
  for (std::size_t i = 0; i < s.saliency.size(); ++i) {
    const double lo = static_cast<double>(i) * s.clip_len, hi = lo + s.clip_len;
    int hit = 0;
    for (const auto& [a, b] : s.relevant_windows)
      if (std::min(hi, b) - std::max(lo, a) > s.clip_len / 2.0) hit = 1;
    out.push_back(hit);
  }
  return out;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> header(const char* magic, std::uint32_t rows, std::uint32_t cols) {
  std::vector<std::uint8_t> b(16, 0);
  std::memcpy(b.data(), magic, std::min<std::size_t>(8, std::strlen(magic) + 1));
  for (int k = 0; k < 4; ++k) {
    b[8 + k] = static_cast<std::uint8_t>(rows >> (8 * k));
    b[12 + k] = static_cast<std::uint8_t>(cols >> (8 * k));
  }
  return b;
}

double cosine(const double* a, const double* b, std::size_t n) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return ab / std::sqrt(aa * bb);
}

}  // namespace

TEST_CASE("clip count and labels") {
  CHECK(clip_count(8.0, 2.0) == 4);
  CHECK(clip_count(7.0, 2.0) == 4);
  CHECK(clip_labels(sample(8, 2, {{0, 4}})) == std::vector<int>{1, 1, 0, 0});
  CHECK(clip_labels(sample(8, 2, {{0, 8}})) == std::vector<int>{1, 1, 1, 1});
  const QuerySample two = sample(8, 2, {{0, 2}, {6, 8}});
  CHECK(clip_labels(two) == brute_labels(two));
  CHECK(clip_labels(two) == std::vector<int>{1, 0, 0, 1});
}

TEST_CASE("exactly half a clip of overlap is not enough") {
  CHECK(clip_labels(sample(8, 2, {{1, 2}})) == std::vector<int>{0, 0, 0, 0});
  CHECK(clip_labels(sample(8, 2, {{0.9, 2}})) == std::vector<int>{1, 0, 0, 0});
}

TEST_CASE("clip labels match brute force and ignore window order") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 30.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::pair<double, double>> windows;
    for (int w = 0; w < 3; ++w) {
      double a = u(rng), b = u(rng);
      if (a > b) std::swap(a, b);
      windows.emplace_back(a, b + 0.01);
    }
    QuerySample s = sample(31.0, 2.0, windows);
    const auto labels = clip_labels(s);
    CHECK(labels == brute_labels(s));
    std::shuffle(s.relevant_windows.begin(), s.relevant_windows.end(), rng);
    CHECK(clip_labels(s) == labels);
  }
}

TEST_CASE("validation messages") {
  CHECK(message_of([] { validate_sample(sample(8, 2, {{3.0, 2.0}})); }).find("start < end violated") !=
        std::string::npos);
  QuerySample short_sal = sample(8, 2, {{0, 4}});
  short_sal.saliency.pop_back();
  CHECK(message_of([&] { validate_sample(short_sal); }).find("L = 4") != std::string::npos);
  QuerySample bad_rating = sample(8, 2, {{0, 4}});
  bad_rating.saliency[1][0] = 5;
  CHECK_THROWS_AS(validate_sample(bad_rating), ValidationError);
  bad_rating.saliency[1][0] = -2;
  CHECK_THROWS_AS(validate_sample(bad_rating), ValidationError);
  CHECK_THROWS_AS(validate_sample(sample(8, 2, {{0, 9}})), ValidationError);
  CHECK_NOTHROW(validate_sample(sample(8, 2, {{0, 4}, {2, 6}})));
}

TEST_CASE("annotation parse errors carry the line number") {
  const std::string bad =
      R"({"qid": 4, "vid": "a", "query": "q", "duration": 8, "clip_len": 2,)"
      R"( "relevant_windows": [[3.0, 2.0]], "saliency_scores": [[0],[0],[0],[0]]})";
  const std::string msg = message_of([&] { parse_annotation(bad, 7); });
  CHECK(msg.find("line 7") != std::string::npos);
  CHECK(msg.find("start < end violated") != std::string::npos);
  CHECK_THROWS_AS(parse_annotation("{not json", 1), ValidationError);
}

TEST_CASE("annotation format round trip") {
  QuerySample s = sample(8, 2, {{0.5, 3.25}, {4, 8}});
  s.query_text = "a person \"jumps\"";
  s.saliency[2] = {-1, 4, 3};
  const QuerySample back = parse_annotation(format_annotation(s));
  CHECK(back.qid == s.qid);
  CHECK(back.vid == s.vid);
  CHECK(back.query_text == s.query_text);
  CHECK(back.relevant_windows == s.relevant_windows);
  CHECK(back.saliency == s.saliency);
}

TEST_CASE("mean ratings skip unannotated entries") {
  QuerySample s = sample(6, 2, {{0, 2}});
  s.saliency = {{-1, -1, -1}, {4, -1, 2}, {0, 1, 2}};
  const auto m = mean_ratings(s);
  CHECK_FALSE(m[0].has_value());
  CHECK(*m[1] == 3.0);
  CHECK(*m[2] == 1.0);
}

TEST_CASE("feature file round trip is exact") {
  const fs::path dir = scratch("features");
  std::mt19937_64 rng(4);
  std::normal_distribution<float> g;
  std::vector<double> v(32);
  for (double& x : v) x = g(rng);
  const Tensor m = Tensor::from({4, 8}, v);
  write_feature_file(dir / "m.vfeat", m);
  const Tensor back = read_feature_file(dir / "m.vfeat");
  CHECK(back.shape() == m.shape());
  CHECK(back.to_vector() == v);
  write_feature_file(dir / "again.vfeat", back);
  std::ifstream a(dir / "m.vfeat", std::ios::binary), b(dir / "again.vfeat", std::ios::binary);
  const std::string ba((std::istreambuf_iterator<char>(a)), {}), bb((std::istreambuf_iterator<char>(b)), {});
  CHECK(ba == bb);
  CHECK(ba.size() == 16 + 4 * 32);
}

TEST_CASE("feature format errors") {
  const fs::path dir = scratch("bad");
  auto bytes = header("XXXX", 1, 1);
  bytes.resize(20, 0);
  write_bytes(dir / "magic.vfeat", bytes);
  CHECK_THROWS_AS(read_feature_file(dir / "magic.vfeat"), FormatError);

  auto trunc = header("FEATB1", 2, 3);
  trunc.resize(16 + 5 * 4, 0);
  write_bytes(dir / "trunc.vfeat", trunc);
  try {
    read_feature_file(dir / "trunc.vfeat");
    FAIL("expected a format error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("truncated") != std::string::npos);
  }

  CHECK_THROWS_AS(decode_features(header("FEATB1", 0xFFFFFFFFu, 0xFFFFFFFFu)), FormatError);
  CHECK_THROWS_AS(decode_features({1, 2, 3}), FormatError);
  CHECK_THROWS_AS(read_feature_file(dir / "absent.vfeat"), LoadError);
}

TEST_CASE("synthetic data is deterministic in the seed") {
  SynthConfig c;
  const Dataset a = synth_generate(c, 17), b = synth_generate(c, 17), other = synth_generate(c, 18);
  REQUIRE(a.size() == 16);
  std::set<std::int64_t> qids;
  for (std::size_t i = 0; i < a.size(); ++i) {
    qids.insert(a.examples[i].sample.qid);
    CHECK(format_annotation(a.examples[i].sample) == format_annotation(b.examples[i].sample));
    CHECK(encode_features(a.examples[i].features.visual) == encode_features(b.examples[i].features.visual));
    CHECK(encode_features(a.examples[i].features.text) == encode_features(b.examples[i].features.text));
  }
  CHECK(qids.size() == 16);
  CHECK(encode_features(a.examples[0].features.visual) != encode_features(other.examples[0].features.visual));
}

TEST_CASE("noise-free synthetic windows are recovered by nearest centroid") {
  SynthConfig c;
  c.noise = 0.0;
  c.visual_dim = c.text_dim = 64;
  const Dataset ds = synth_generate(c, 5);
  std::vector<std::vector<double>> centroids;
  for (const Example& ex : ds.examples) centroids.push_back(mean(ex.features.text, 0).to_vector());
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const Example& ex = ds.examples[n];
    const auto v = ex.features.visual.to_vector();
    const std::size_t dim = ex.features.visual.dim(1);
    std::vector<int> recovered;
    for (std::size_t i = 0; i < ex.sample.num_clips(); ++i) {
      std::size_t best = 0;
      double best_cos = -2.0;
      for (std::size_t k = 0; k < centroids.size(); ++k) {
        const double cs = cosine(&v[i * dim], centroids[k].data(), dim);
        if (cs > best_cos) {
          best_cos = cs;
          best = k;
        }
      }
      recovered.push_back(best == n && best_cos > 0.99 ? 1 : 0);
    }
    CHECK(recovered == clip_labels(ex.sample));
  }
}

TEST_CASE("synthetic ratings stay in range and favor the window") {
  SynthConfig c;
  c.noise = 0.0;
  const Dataset ds = synth_generate(c, 9);
  for (const Example& ex : ds.examples) {
    const auto labels = clip_labels(ex.sample);
    const auto means = mean_ratings(ex.sample);
    double in = 0, out = 0;
    int n_in = 0, n_out = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      for (int r : ex.sample.saliency[i]) {
        CHECK(r >= 0);
        CHECK(r <= 4);
      }
      (labels[i] ? in : out) += *means[i];
      ++(labels[i] ? n_in : n_out);
    }
    if (n_out > 0) CHECK(in / n_in > out / n_out);
    CHECK_NOTHROW(validate_example(ex));
  }
}

TEST_CASE("degenerate synthetic configs are rejected") {
  SynthConfig c;
  c.num_clips = 1;
  CHECK_THROWS_AS(synth_generate(c, 0), ConfigError);
  c = SynthConfig{};
  c.min_window_clips = 5;
  c.max_window_clips = 4;
  CHECK_THROWS_AS(synth_generate(c, 0), ConfigError);
}

TEST_CASE("audio is concatenated per clip") {
  SynthConfig c;
  c.num_samples = 2;
  c.audio_dim = 5;
  const Dataset ds = synth_generate(c, 1);
  const FeatureBundle& f = ds.examples[0].features;
  REQUIRE(f.has_audio());
  const Tensor eff = f.effective_visual();
  CHECK(eff.shape() == Shape{c.num_clips, c.visual_dim + 5});
  CHECK(f.visual_width() == c.visual_dim + 5);
  CHECK(eff.at(3, c.visual_dim + 2) == f.audio.at(3, 2));
  CHECK(eff.at(3, 1) == f.visual.at(3, 1));
}

TEST_CASE("dataset persistence round trip") {
  const fs::path dir = scratch("roundtrip");
  SynthConfig c;
  c.num_samples = 5;
  c.audio_dim = 4;
  const Dataset ds = synth_generate(c, 2);
  write_dataset_dir(ds, dir);
  const Dataset back = load_dataset_dir(dir);
  REQUIRE(back.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(format_annotation(back.examples[i].sample) == format_annotation(ds.examples[i].sample));
    CHECK(back.examples[i].features.visual.to_vector() == ds.examples[i].features.visual.to_vector());
    CHECK(back.examples[i].features.audio.to_vector() == ds.examples[i].features.audio.to_vector());
    CHECK(back.examples[i].features.text.to_vector() == ds.examples[i].features.text.to_vector());
  }
}

TEST_CASE("single-line dataset and load errors") {
  const fs::path dir = scratch("single");
  SynthConfig c;
  c.num_samples = 1;
  write_dataset_dir(synth_generate(c, 3), dir);
  CHECK(load_dataset_dir(dir).size() == 1);

  fs::remove(dir / "features" / "0.tfeat");
  try {
    load_dataset_dir(dir);
    FAIL("expected a load error");
  } catch (const LoadError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("qid 0") != std::string::npos);
  }
}

TEST_CASE("duplicate qids are rejected") {
  const fs::path dir = scratch("dupes");
  SynthConfig c;
  c.num_samples = 2;
  Dataset ds = synth_generate(c, 3);
  ds.examples[1].sample.qid = 0;
  ds.examples[1].sample.vid = "other";
  write_dataset_dir(ds, dir);
  CHECK_THROWS_AS(load_dataset_dir(dir), ValidationError);
}
