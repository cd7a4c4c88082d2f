#pragma once

#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "qsector/backtest.hpp"
#include "qsector/checkpoint.hpp"
#include "qsector/config.hpp"
#include "qsector/ppo.hpp"

// End-to-end commands shared by the command-line tool, the Python module and
// the acceptance suite.
namespace qsector {

class KindMismatchError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct PreparedData {
  SectorPanel panel;
  LoadReport report;
  SplitIndices split;
  FeatureTensor features;  // z-scored with training-range statistics
};

PreparedData prepare_data(const ExperimentConfig& config);

ad::Checkpoint make_checkpoint(const ActorCritic& agent, const ExperimentConfig& config);

// Rebuilds the agent described by `config` and loads the checkpoint into it.
// Throws KindMismatchError when the checkpoint was trained with another backbone.
std::unique_ptr<ActorCritic> restore_agent(const ad::Checkpoint& ckpt, const ExperimentConfig& config,
                                           std::size_t input_dim);

struct TrainOutputs {
  std::string checkpoint_path;
  std::string rewards_path;
  std::string config_path;
  std::vector<EpisodeLog> curve;
};

// Trains on the training split and writes model.ckpt, rewards.csv and
// resolved.cfg into config.out.
TrainOutputs run_train(const ExperimentConfig& config, std::ostream* log = nullptr);

struct BacktestOutputs {
  std::string metrics_path;
  std::string curve_path;
  MetricsReport metrics;
  EquityCurve curve;
  std::string table;
};

// Evaluates a checkpoint on the test split; writes metrics.txt, metrics_table.txt
// and equity.csv into config.out.
BacktestOutputs run_backtest_command(const ExperimentConfig& config, const std::string& checkpoint_path);

MetricsReport parse_metrics_kv(const std::string& text);

struct CompareRow {
  std::string run;
  std::string model;
  std::optional<double> final_reward;
  std::optional<MetricsReport> metrics;
  std::string problem;  // empty for complete rows

  bool complete() const { return problem.empty(); }
};

std::vector<CompareRow> compare_runs(const std::vector<std::string>& run_dirs);
// Columns: model, final reward, CR, AR, AV, SR, MDD.
std::string format_compare_table(const std::vector<CompareRow>& rows);
std::string format_compare_csv(const std::vector<CompareRow>& rows);

void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace qsector
