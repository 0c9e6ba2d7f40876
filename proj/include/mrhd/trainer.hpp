#pragma once

// Optimization loop, checkpoints, prediction files and the lambda sweep.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "mrhd/metrics.hpp"
#include "mrhd/model.hpp"

namespace mrhd {

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  std::size_t epochs = 200;
  std::size_t max_steps = 0;  // 0: run all epochs
  double learning_rate = 1e-4;
  double lambda_lg = 0.3;
  std::size_t d = 256;
  std::size_t num_queries = 10;
  std::size_t decoder_layers = 2;
  std::size_t heads = 4;
  LossWeights loss_weights;
  double saliency_margin = 0.2;
  std::size_t max_saliency_pairs = 16;
  double saliency_min_gap = 0.0;  // 0: any strictly higher-rated clip pairs
  double grad_clip = 0.1;  // global L2 norm; <= 0 disables
  bool raw_eq11 = false;
  double temperature = 1.0;
  std::string annotations;  // informational dataset paths
  std::string features;

  void validate() const;
  LossSettings loss_settings() const;
  ModelConfig model_config(std::size_t visual_dim, std::size_t text_dim) const;
};

std::string config_to_json(const TrainConfig& config, int indent = -1);
// Unknown keys are ignored; missing keys keep their defaults.
TrainConfig config_from_json(const std::string& text);
TrainConfig load_config(const std::filesystem::path& path);

SynthConfig synth_config_from_json(const std::string& text);
SynthConfig load_synth_config(const std::filesystem::path& path);

struct AdamState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
  std::uint64_t step = 0;
};

struct AdamSettings {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const NamedParams& params, double max_norm);
void adam_step(const NamedParams& params, AdamState& state, const AdamSettings& settings);
void zero_grads(const NamedParams& params);

// Input widths (visual incl. audio, text) shared by every example.
std::pair<std::size_t, std::size_t> dataset_dims(const Dataset& dataset);

struct TrainResult {
  Model model;
  AdamState adam;
  std::vector<LossBreakdown> step_losses;
  std::vector<double> epoch_losses;  // mean total per epoch
  std::vector<LossBreakdown> epoch_breakdowns;
};

// Deterministic in config.seed. Per-epoch summaries go to `log` if given.
TrainResult train(const Dataset& dataset, const TrainConfig& config, std::ostream* log = nullptr);

// Checkpoint layout: 8-byte magic "MRHDCK01", LE uint64 header length, JSON
// header {config, model, step, tensors: [{name, shape, offset}]}, then LE
// float64 blobs. Optimizer moments are stored as "adam.m/<path>" and
// "adam.v/<path>".
struct Checkpoint {
  TrainConfig config;
  Model model;
  AdamState adam;
};

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const Model& model,
                     const AdamState& adam);
Checkpoint load_checkpoint(const std::filesystem::path& path);
// Tensor names stored in a checkpoint file, in file order.
std::vector<std::string> checkpoint_tensor_names(const std::filesystem::path& path);

std::vector<MomentPrediction> predict(const Model& model, const Dataset& dataset);
void predict_to_file(const Model& model, const Dataset& dataset, const std::filesystem::path& out);

struct SweepRow {
  double lambda_lg = 0.0;
  EvalReport report;
  double final_loss = 0.0;
  double align_contribution = 0.0;  // lambda * (local + global), last epoch mean
};

std::vector<SweepRow> sweep_lambda(const Dataset& train_set, const Dataset& eval_set,
                                   const TrainConfig& config, const std::vector<double>& values,
                                   std::ostream* log = nullptr);
std::string sweep_to_json(const std::vector<SweepRow>& rows, int indent = -1);

}  // namespace mrhd
