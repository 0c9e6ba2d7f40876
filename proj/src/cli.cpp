#include "mrhd/cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mrhd/error.hpp"
#include "mrhd/gradcheck.hpp"
#include "mrhd/metrics.hpp"
#include "mrhd/prediction.hpp"
#include "mrhd/trainer.hpp"

namespace mrhd::cli {

namespace {

using nlohmann::json;

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
  if (out_path.empty()) {
    out << text << "\n";
    return;
  }
  std::ofstream f(out_path, std::ios::trunc);
  if (!f) throw LoadError("cannot write " + out_path);
  f << text << "\n";
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad lambda value '" + item + "'");
    }
  }
  if (values.empty()) throw ConfigError("--lambdas is empty");
  return values;
}

std::string gradcheck_json(const GradcheckReport& report) {
  json entries = json::array();
  for (const GradcheckEntry& e : report.entries) {
    entries.push_back({{"name", e.name},
                       {"worst_relative_error", e.worst},
                       {"tolerance", e.tolerance},
                       {"trials", e.trials},
                       {"retries", e.retries},
                       {"passed", e.passed()}});
  }
  return json{{"passed", report.passed()}, {"kernels", entries}}.dump(2);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint moment retrieval and highlight detection", "mrhd"};
  app.require_subcommand(1, 1);

  std::string config_path, data_dir, out_path, ckpt_path, preds_path, eval_dir, lambdas = "0,0.1,0.3,0.5";
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> seed_override;

  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset");
  synth->add_option("--config", config_path, "Synthetic data config (JSON)");
  synth->add_option("--seed", seed, "Random seed");
  synth->add_option("--out", out_path, "Output dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  train->add_option("--config", config_path, "Training config (JSON)")->required();
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", out_path, "Checkpoint path")->required();
  train->add_option("--seed", seed_override, "Override the config seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint or a prediction file");
  eval->add_option("--ckpt", ckpt_path, "Checkpoint path");
  eval->add_option("--preds", preds_path, "Prediction file (JSONL) instead of a checkpoint");
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_option("--out", out_path, "Report path (default: stdout)");

  auto* predict_cmd = app.add_subcommand("predict", "Write predictions as JSONL");
  predict_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  predict_cmd->add_option("--data", data_dir, "Dataset directory")->required();
  predict_cmd->add_option("--out", out_path, "Prediction file")->required();

  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", seed, "Random seed");

  auto* sweep = app.add_subcommand("sweep", "Train one model per lambda_lg value");
  sweep->add_option("--config", config_path, "Training config (JSON)")->required();
  sweep->add_option("--data", data_dir, "Training dataset directory")->required();
  sweep->add_option("--eval-data", eval_dir, "Evaluation dataset directory (default: --data)");
  sweep->add_option("--lambdas", lambdas, "Comma-separated lambda_lg values");
  sweep->add_option("--out", out_path, "Table path (default: stdout)");
  sweep->add_option("--seed", seed_override, "Override the config seed");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) {
      const SynthConfig sc = config_path.empty() ? SynthConfig{} : load_synth_config(config_path);
      const Dataset data = synth_generate(sc, seed);
      write_dataset_dir(data, out_path);
      err << "synth: wrote " << data.size() << " samples to " << out_path << "\n";
    } else if (*train) {
      TrainConfig config = load_config(config_path);
      if (seed_override) config.seed = *seed_override;
      const Dataset data = load_dataset_dir(data_dir);
      const TrainResult result = mrhd::train(data, config, &err);
      save_checkpoint(out_path, config, result.model, result.adam);
      const double final_loss = result.step_losses.empty() ? 0.0 : result.step_losses.back().total;
      out << json{{"checkpoint", out_path}, {"steps", result.adam.step}, {"final_loss", final_loss}}.dump()
          << "\n";
    } else if (*eval) {
      if (ckpt_path.empty() == preds_path.empty())
        throw ConfigError("eval needs exactly one of --ckpt or --preds");
      const Dataset data = load_dataset_dir(data_dir);
      std::vector<MomentPrediction> preds;
      if (!ckpt_path.empty()) {
        preds = mrhd::predict(load_checkpoint(ckpt_path).model, data);
      } else {
        preds = read_predictions(preds_path);
      }
      emit(report_to_json(evaluate(preds, data), 2), out_path, out);
    } else if (*predict_cmd) {
      const Dataset data = load_dataset_dir(data_dir);
      predict_to_file(load_checkpoint(ckpt_path).model, data, out_path);
      err << "predict: wrote " << data.size() << " lines to " << out_path << "\n";
    } else if (*gradcheck) {
      const GradcheckReport report = run_gradcheck_suite(seed);
      out << gradcheck_json(report) << "\n";
      if (!report.passed()) {
        err << "gradcheck: tolerance exceeded\n";
        return 1;
      }
    } else if (*sweep) {
      TrainConfig config = load_config(config_path);
      if (seed_override) config.seed = *seed_override;
      const std::vector<double> values = parse_lambdas(lambdas);
      const Dataset train_set = load_dataset_dir(data_dir);
      const Dataset eval_set = eval_dir.empty() ? train_set : load_dataset_dir(eval_dir);
      emit(sweep_to_json(sweep_lambda(train_set, eval_set, config, values, &err), 2), out_path, out);
    }
  } catch (const ValidationError& e) {
    err << "validation error: " << e.what() << "\n";
    return 1;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    err << "format error: " << e.what() << "\n";
    return 1;
  } catch (const LoadError& e) {
    err << "load error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}

}  // namespace mrhd::cli
