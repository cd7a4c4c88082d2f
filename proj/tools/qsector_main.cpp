#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "qsector/pipeline.hpp"

namespace {

using namespace qsector;

constexpr int kOk = 0;
constexpr int kRuntimeFailure = 1;
constexpr int kInvalidInput = 2;

// A relative data path in a config file is taken relative to that file; one
// given with --data is relative to the working directory.
ExperimentConfig resolve(const std::string& config_path, const Overrides& ov) {
  namespace fs = std::filesystem;
  ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  if (!config_path.empty() && !cfg.data_path.empty() && fs::path(cfg.data_path).is_relative()) {
    cfg.data_path = (fs::absolute(config_path).parent_path() / cfg.data_path).lexically_normal().string();
  }
  for (const auto& msg : apply_overrides(cfg, ov)) std::cerr << "override: " << msg << '\n';
  if (!cfg.data_path.empty()) cfg.data_path = fs::absolute(cfg.data_path).lexically_normal().string();
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sector-rotation PPO agents with classical and quantum-circuit backbones"};
  app.require_subcommand(1);

  std::string config_path, model, data, out, checkpoint;
  std::uint64_t seed = 0;
  std::size_t top_n = 0, epochs = 0;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "sectioned key=value experiment file");
    cmd->add_option("--model", model, "backbone: mlp, lstm, transformer, qnn, qrwkv, qasa");
    cmd->add_option("--seed", seed, "root random seed");
    cmd->add_option("--data", data, "panel file (long format: date, sector_id, close, cap_share)");
    cmd->add_option("--out", out, "output directory");
    cmd->add_option("--top-n", top_n, "N of the top-N reward and portfolio");
    cmd->add_option("--epochs", epochs, "training episodes");
  };
  auto overrides = [&](CLI::App* cmd) {
    Overrides ov;
    if (cmd->count("--model")) ov.model = model;
    if (cmd->count("--seed")) ov.seed = seed;
    if (cmd->count("--data")) ov.data = data;
    if (cmd->count("--out")) ov.out = out;
    if (cmd->count("--top-n")) ov.top_n = top_n;
    if (cmd->count("--epochs")) ov.epochs = epochs;
    return ov;
  };

  auto* train_cmd = app.add_subcommand("train", "train an agent; writes model.ckpt, rewards.csv, resolved.cfg");
  add_common(train_cmd);

  auto* backtest_cmd = app.add_subcommand("backtest", "evaluate a checkpoint on the test split");
  add_common(backtest_cmd);
  backtest_cmd->add_option("--checkpoint", checkpoint, "checkpoint file (default: <out>/model.ckpt)");

  std::vector<std::string> runs;
  auto* compare_cmd = app.add_subcommand("compare", "tabulate final reward and metrics across run directories");
  compare_cmd->add_option("runs", runs, "run directories")->required();
  compare_cmd->add_option("--out", out, "also write the table as CSV to this file");

  SynthSpec synth;
  std::string regime = "gbm";
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic panel");
  synth_cmd->add_option("--out", out, "output panel file")->required();
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--sectors", synth.sectors, "number of sectors")->capture_default_str();
  synth_cmd->add_option("--days", synth.days, "number of business days")->capture_default_str();
  synth_cmd->add_option("--regime", regime, "gbm or deterministic-leader")->capture_default_str();

  auto* features_cmd = app.add_subcommand("features-dump", "write the engineered feature matrix as CSV");
  add_common(features_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalidInput;
  }

  try {
    if (*train_cmd) {
      const ExperimentConfig cfg = resolve(config_path, overrides(train_cmd));
      const auto res = run_train(cfg, &std::cerr);
      std::cout << "wrote " << res.checkpoint_path << ", " << res.rewards_path << ", " << res.config_path << '\n';
    } else if (*backtest_cmd) {
      const ExperimentConfig cfg = resolve(config_path, overrides(backtest_cmd));
      const std::string ckpt =
          checkpoint.empty() ? (std::filesystem::path(cfg.out) / "model.ckpt").string() : checkpoint;
      const auto res = run_backtest_command(cfg, ckpt);
      std::cout << res.table << "wrote " << res.metrics_path << ", " << res.curve_path << '\n';
    } else if (*compare_cmd) {
      const auto rows = compare_runs(runs);
      std::cout << format_compare_table(rows);
      if (!out.empty()) write_text(out, format_compare_csv(rows));
    } else if (*synth_cmd) {
      synth.regime = parse_regime(regime);
      write_panel(synth_panel(synth), out);
      std::cout << "wrote " << out << '\n';
    } else if (*features_cmd) {
      ExperimentConfig cfg = resolve(config_path, overrides(features_cmd));
      const PreparedData d = prepare_data(cfg);
      const std::string text = format_features(d.features, d.panel.dates);
      if (features_cmd->count("--out")) {
        write_text(cfg.out, text);
        std::cout << "wrote " << cfg.out << '\n';
      } else {
        std::cout << text;
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalidInput;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalidInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kOk;
}
