#include "mrhd/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "mrhd/error.hpp"
#include "mrhd/prediction.hpp"

namespace mrhd {

using nlohmann::json;

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_object(const std::string& text, const char* what) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  return j;
}

json config_json(const TrainConfig& c) {
  return json{{"seed", c.seed},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"learning_rate", c.learning_rate},
              {"lambda_lg", c.lambda_lg},
              {"d", c.d},
              {"num_queries", c.num_queries},
              {"decoder_layers", c.decoder_layers},
              {"heads", c.heads},
              {"loss_weights",
               {{"l1", c.loss_weights.l1},
                {"giou", c.loss_weights.giou},
                {"cls", c.loss_weights.cls},
                {"saliency", c.loss_weights.saliency}}},
              {"saliency_margin", c.saliency_margin},
              {"max_saliency_pairs", c.max_saliency_pairs},
              {"saliency_min_gap", c.saliency_min_gap},
              {"grad_clip", c.grad_clip},
              {"raw_eq11", c.raw_eq11},
              {"temperature", c.temperature},
              {"annotations", c.annotations},
              {"features", c.features}};
}

TrainConfig config_from(const json& j) {
  TrainConfig c;
  read_key(j, "seed", c.seed);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "epochs", c.epochs);
  read_key(j, "max_steps", c.max_steps);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "lambda_lg", c.lambda_lg);
  read_key(j, "d", c.d);
  read_key(j, "num_queries", c.num_queries);
  read_key(j, "decoder_layers", c.decoder_layers);
  read_key(j, "heads", c.heads);
  if (j.contains("loss_weights")) {
    const json& w = j.at("loss_weights");
    if (!w.is_object()) throw ConfigError("config key 'loss_weights' must be an object");
    read_key(w, "l1", c.loss_weights.l1);
    read_key(w, "giou", c.loss_weights.giou);
    read_key(w, "cls", c.loss_weights.cls);
    read_key(w, "saliency", c.loss_weights.saliency);
  }
  read_key(j, "saliency_margin", c.saliency_margin);
  read_key(j, "max_saliency_pairs", c.max_saliency_pairs);
  read_key(j, "saliency_min_gap", c.saliency_min_gap);
  read_key(j, "grad_clip", c.grad_clip);
  read_key(j, "raw_eq11", c.raw_eq11);
  read_key(j, "temperature", c.temperature);
  read_key(j, "annotations", c.annotations);
  read_key(j, "features", c.features);
  c.validate();
  return c;
}

json model_json(const ModelConfig& m) {
  return json{{"visual_dim", m.visual_dim},   {"text_dim", m.text_dim},
              {"d", m.d},                     {"num_queries", m.num_queries},
              {"decoder_layers", m.decoder_layers}, {"heads", m.heads},
              {"raw_eq11", m.raw_eq11}};
}

ModelConfig model_from(const json& j) {
  ModelConfig m;
  read_key(j, "visual_dim", m.visual_dim);
  read_key(j, "text_dim", m.text_dim);
  read_key(j, "d", m.d);
  read_key(j, "num_queries", m.num_queries);
  read_key(j, "decoder_layers", m.decoder_layers);
  read_key(j, "heads", m.heads);
  read_key(j, "raw_eq11", m.raw_eq11);
  return m;
}

LossBreakdown mean_breakdown(const std::vector<LossBreakdown>& parts) {
  LossBreakdown out{};
  if (parts.empty()) return out;
  for (const LossBreakdown& b : parts) {
    out.mom += b.mom;
    out.high += b.high;
    out.local += b.local;
    out.global += b.global;
    out.total += b.total;
    out.lambda_lg = b.lambda_lg;
  }
  const double n = static_cast<double>(parts.size());
  out.mom /= n;
  out.high /= n;
  out.local /= n;
  out.global /= n;
  out.total /= n;
  return out;
}

std::string breakdown_str(const LossBreakdown& b) {
  std::ostringstream ss;
  ss << "total=" << b.total << " mom=" << b.mom << " high=" << b.high << " local=" << b.local
     << " global=" << b.global << " lambda=" << b.lambda_lg;
  return ss.str();
}

constexpr char kCkptMagic[8] = {'M', 'R', 'H', 'D', 'C', 'K', '0', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

struct RawCheckpoint {
  json header;
  std::string blob;  // float64 payload after the header
};

RawCheckpoint read_raw_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_text(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCkptMagic, 8) != 0)
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) throw FormatError(path.string() + ": truncated header");
  RawCheckpoint raw;
  try {
    raw.header = json::parse(bytes.substr(16, header_len));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad header: " + e.what());
  }
  raw.blob = bytes.substr(16 + header_len);
  return raw;
}

std::vector<double> read_blob(const RawCheckpoint& raw, std::uint64_t offset, std::size_t count,
                              const std::string& name) {
  if (offset % 8 != 0 || offset / 8 + count > raw.blob.size() / 8 || raw.blob.size() % 8 != 0)
    throw FormatError("checkpoint tensor " + name + " out of bounds");
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t bits = get_u64(raw.blob, offset + 8 * i);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(lambda_lg >= 0.0) || !std::isfinite(lambda_lg)) throw ConfigError("lambda_lg must be finite and >= 0");
  if (d == 0) throw ConfigError("d must be > 0");
  if (num_queries == 0) throw ConfigError("num_queries must be > 0");
  if (heads == 0 || d % heads != 0)
    throw ConfigError("d = " + std::to_string(d) + " not divisible by heads = " + std::to_string(heads));
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be finite and >= 0");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (!(saliency_margin >= 0.0)) throw ConfigError("saliency_margin must be >= 0");
  if (!(saliency_min_gap >= 0.0)) throw ConfigError("saliency_min_gap must be >= 0");
}

LossSettings TrainConfig::loss_settings() const {
  LossSettings s;
  s.weights = loss_weights;
  s.lambda_lg = lambda_lg;
  s.temperature = temperature;
  s.saliency_margin = saliency_margin;
  s.max_saliency_pairs = max_saliency_pairs;
  s.saliency_min_gap = saliency_min_gap;
  return s;
}

ModelConfig TrainConfig::model_config(std::size_t visual_dim, std::size_t text_dim) const {
  ModelConfig m;
  m.visual_dim = visual_dim;
  m.text_dim = text_dim;
  m.d = d;
  m.num_queries = num_queries;
  m.decoder_layers = decoder_layers;
  m.heads = heads;
  m.raw_eq11 = raw_eq11;
  return m;
}

std::string config_to_json(const TrainConfig& config, int indent) { return config_json(config).dump(indent); }

TrainConfig config_from_json(const std::string& text) { return config_from(parse_object(text, "train config")); }

TrainConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const LoadError& e) {
    throw ConfigError(e.what());
  }
  return config_from_json(text);
}

SynthConfig synth_config_from_json(const std::string& text) {
  const json j = parse_object(text, "synth config");
  SynthConfig c;
  read_key(j, "num_samples", c.num_samples);
  read_key(j, "num_clips", c.num_clips);
  read_key(j, "num_words", c.num_words);
  read_key(j, "visual_dim", c.visual_dim);
  read_key(j, "text_dim", c.text_dim);
  read_key(j, "audio_dim", c.audio_dim);
  read_key(j, "clip_len", c.clip_len);
  read_key(j, "min_window_clips", c.min_window_clips);
  read_key(j, "max_window_clips", c.max_window_clips);
  read_key(j, "noise", c.noise);
  read_key(j, "num_annotators", c.num_annotators);
  return c;
}

SynthConfig load_synth_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text(path);
  } catch (const LoadError& e) {
    throw ConfigError(e.what());
  }
  return synth_config_from_json(text);
}

double clip_grad_norm(const NamedParams& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (const auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      Tensor t = p;
      for (double& g : t.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

void adam_step(const NamedParams& params, AdamState& state, const AdamSettings& s) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(s.beta1, t);
  const double c2 = 1.0 - std::pow(s.beta2, t);
  for (const auto& [name, p] : params) {
    Tensor param = p;
    const std::vector<double> g = param.grad();
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() != g.size()) m.assign(g.size(), 0.0);
    if (v.size() != g.size()) v.assign(g.size(), 0.0);
    std::span<double> w = param.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m[i] = s.beta1 * m[i] + (1.0 - s.beta1) * g[i];
      v[i] = s.beta2 * v[i] + (1.0 - s.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.eps);
    }
  }
}

void zero_grads(const NamedParams& params) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
}

std::pair<std::size_t, std::size_t> dataset_dims(const Dataset& dataset) {
  if (dataset.examples.empty()) throw ValidationError("dataset is empty");
  const std::size_t dv = dataset.examples.front().features.visual_width();
  const std::size_t dt = dataset.examples.front().features.text.dim(1);
  for (const Example& ex : dataset.examples) {
    if (ex.features.visual_width() != dv || ex.features.text.dim(1) != dt)
      throw ValidationError("qid " + std::to_string(ex.sample.qid) +
                            ": feature widths differ from the first example");
  }
  return {dv, dt};
}

TrainResult train(const Dataset& dataset, const TrainConfig& config, std::ostream* log) {
  config.validate();
  for (const Example& ex : dataset.examples) validate_example(ex);
  const auto [dv, dt] = dataset_dims(dataset);
  TrainResult result{Model(config.model_config(dv, dt), config.seed), {}, {}, {}, {}};
  const NamedParams params = result.model.parameters();
  const LossSettings settings = config.loss_settings();
  AdamSettings adam;
  adam.learning_rate = config.learning_rate;

  Rng shuffle_rng(mix_seed(config.seed, 0x5348554646ULL));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  std::uint64_t step = 0;
  bool done = false;
  for (std::size_t epoch = 0; epoch < config.epochs && !done; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::vector<LossBreakdown> epoch_parts;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      if (config.max_steps > 0 && step >= config.max_steps) {
        done = true;
        break;
      }
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const Example*> batch;
      for (std::size_t i = begin; i < end; ++i) batch.push_back(&dataset.examples[order[i]]);

      zero_grads(params);
      const LossTerms terms = batch_loss(result.model, batch, settings, mix_seed(config.seed, step + 1));
      if (!std::isfinite(terms.breakdown.total)) {
        throw TrainingError("non-finite loss at step " + std::to_string(step) + ": " +
                            breakdown_str(terms.breakdown));
      }
      terms.total.backward();
      clip_grad_norm(params, config.grad_clip);
      adam_step(params, result.adam, adam);
      for (const auto& [name, t] : params)
        for (double v : t.data())
          if (!std::isfinite(v) || std::abs(v) > 1e150)
            throw TrainingError("parameter " + name + " diverged at step " + std::to_string(step) + " (loss " +
                                breakdown_str(terms.breakdown) + ")");
      result.step_losses.push_back(terms.breakdown);
      epoch_parts.push_back(terms.breakdown);
      ++step;
    }
    if (epoch_parts.empty()) break;
    const LossBreakdown mean = mean_breakdown(epoch_parts);
    result.epoch_losses.push_back(mean.total);
    result.epoch_breakdowns.push_back(mean);
    if (log) *log << "epoch " << epoch + 1 << " step " << step << " " << breakdown_str(mean) << "\n";
  }
  return result;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const Model& model,
                     const AdamState& adam) {
  json tensors = json::array();
  std::string blob;
  auto append = [&](const std::string& name, const Shape& shape, std::span<const double> values) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"offset", blob.size()}});
    for (double v : values) put_u64(blob, std::bit_cast<std::uint64_t>(v));
  };
  const NamedParams params = model.parameters();
  for (const auto& [name, p] : params) append(name, p.shape(), p.data());
  for (const auto& [name, p] : params) {
    const auto m = adam.m.find(name);
    const auto v = adam.v.find(name);
    if (m == adam.m.end() || v == adam.v.end()) continue;
    append("adam.m/" + name, p.shape(), m->second);
    append("adam.v/" + name, p.shape(), v->second);
  }
  const json header{{"config", config_json(config)},
                    {"model", model_json(model.config)},
                    {"step", adam.step},
                    {"tensors", tensors}};
  const std::string header_text = header.dump();
  std::string out(kCkptMagic, 8);
  put_u64(out, header_text.size());
  out += header_text;
  out += blob;
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw LoadError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw LoadError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw_checkpoint(path);
  Checkpoint ck;
  try {
    ck.config = config_from(raw.header.at("config"));
    const ModelConfig mc = model_from(raw.header.at("model"));
    ck.model = Model(mc, 0);
    ck.adam.step = raw.header.at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": incomplete header: " + e.what());
  }
  std::map<std::string, Tensor> by_name;
  for (const auto& [name, p] : ck.model.parameters()) by_name.emplace(name, p);
  std::size_t restored = 0;
  for (const json& entry : raw.header.at("tensors")) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::vector<double> values =
        read_blob(raw, entry.at("offset").get<std::uint64_t>(), shape_numel(shape), name);
    if (name.rfind("adam.m/", 0) == 0) {
      ck.adam.m[name.substr(7)] = values;
    } else if (name.rfind("adam.v/", 0) == 0) {
      ck.adam.v[name.substr(7)] = values;
    } else {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError(path.string() + ": unknown parameter " + name);
      if (it->second.shape() != shape)
        throw FormatError(path.string() + ": parameter " + name + " has shape " + shape_str(shape) +
                          ", model expects " + shape_str(it->second.shape()));
      std::copy(values.begin(), values.end(), it->second.mutable_data().begin());
      ++restored;
    }
  }
  if (restored != by_name.size())
    throw FormatError(path.string() + ": " + std::to_string(by_name.size() - restored) +
                      " parameters missing");
  return ck;
}

std::vector<std::string> checkpoint_tensor_names(const std::filesystem::path& path) {
  const RawCheckpoint raw = read_raw_checkpoint(path);
  std::vector<std::string> names;
  for (const json& entry : raw.header.at("tensors")) names.push_back(entry.at("name").get<std::string>());
  return names;
}

std::vector<MomentPrediction> predict(const Model& model, const Dataset& dataset) {
  std::vector<MomentPrediction> out;
  out.reserve(dataset.size());
  for (const Example& ex : dataset.examples) {
    validate_example(ex);
    if (ex.features.visual_width() != model.config.visual_dim ||
        ex.features.text.dim(1) != model.config.text_dim) {
      throw ConfigError("qid " + std::to_string(ex.sample.qid) + ": features are " +
                        std::to_string(ex.features.visual_width()) + "/" +
                        std::to_string(ex.features.text.dim(1)) + " wide, model expects " +
                        std::to_string(model.config.visual_dim) + "/" +
                        std::to_string(model.config.text_dim));
    }
    out.push_back(forward(model, ex).prediction);
  }
  return out;
}

void predict_to_file(const Model& model, const Dataset& dataset, const std::filesystem::path& out) {
  write_predictions(out, predict(model, dataset));
}

std::vector<SweepRow> sweep_lambda(const Dataset& train_set, const Dataset& eval_set,
                                   const TrainConfig& config, const std::vector<double>& values,
                                   std::ostream* log) {
  for (double v : values)
    if (!std::isfinite(v) || v < 0.0) throw ConfigError("lambda values must be finite and >= 0");
  std::vector<SweepRow> rows;
  for (double v : values) {
    TrainConfig c = config;
    c.lambda_lg = v;
    if (log) *log << "sweep: lambda_lg = " << v << "\n";
    const TrainResult r = train(train_set, c, log);
    SweepRow row;
    row.lambda_lg = v;
    row.report = evaluate(predict(r.model, eval_set), eval_set);
    if (!r.epoch_breakdowns.empty()) {
      const LossBreakdown& last = r.epoch_breakdowns.back();
      row.final_loss = last.total;
      row.align_contribution = v * (last.local + last.global);
    }
    rows.push_back(row);
  }
  return rows;
}

std::string sweep_to_json(const std::vector<SweepRow>& rows, int indent) {
  json out = json::array();
  for (const SweepRow& r : rows) {
    out.push_back({{"lambda_lg", r.lambda_lg},
                   {"final_loss", r.final_loss},
                   {"align_contribution", r.align_contribution},
                   {"report", json::parse(report_to_json(r.report))}});
  }
  return out.dump(indent);
}

}  // namespace mrhd
