#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qsector/data.hpp"
#include "qsector/env.hpp"
#include "qsector/features.hpp"

namespace qsector {

inline constexpr double kTradingDays = 252.0;

struct EquityCurve {
  std::vector<std::string> dates;
  std::vector<double> values;         // values[0] == 1.0
  std::vector<double> daily_returns;  // daily_returns[i] = values[i+1] / values[i] - 1

  std::size_t size() const { return values.size(); }
};

struct MetricsReport {
  double cumulative_return = 0.0;
  double annualized_return = 0.0;
  double annualized_volatility = 0.0;
  std::optional<double> sharpe_ratio;  // empty when volatility is zero
  double max_drawdown = 0.0;
  std::size_t n_days = 0;  // number of daily returns
};

// Weights over S sectors followed by cash: the n most probable targets get
// 1/n each (ties to the lower index); the dummy's share goes to cash.
std::vector<double> allocate(std::span<const double> probs, std::size_t n);

struct BacktestConfig {
  std::size_t top_n = 10;
  std::size_t seq_len = 10;
  // Proportional cost charged on one-way turnover at each rebalance.
  double cost_rate = 0.0;
};

using ProbsFn = std::function<std::vector<std::vector<double>>(std::span<const Observation>)>;

// Replays the policy over days [begin, end]: on each day t from the first
// observable day up to end-1 it allocates and earns the next day's return.
EquityCurve run_backtest(const SectorPanel& panel, const FeatureTensor& features, std::size_t begin,
                         std::size_t end, const ProbsFn& policy, const BacktestConfig& config);

// Portfolio equity from explicit daily weights (S + 1 entries per decision day,
// decisions on days first .. first + weights.size() - 1).
EquityCurve replay_weights(const SectorPanel& panel, std::size_t first, const std::vector<std::vector<double>>& weights,
                           double cost_rate = 0.0);

MetricsReport compute_metrics(const EquityCurve& curve);
MetricsReport compute_metrics(std::span<const double> values);

double max_drawdown(std::span<const double> values);

std::string format_metrics_kv(const MetricsReport& m);
std::string format_metrics_table(const MetricsReport& m, const std::string& label);
std::string format_equity_curve(const EquityCurve& curve);

}  // namespace qsector
