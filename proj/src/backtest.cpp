#include "qsector/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace qsector {

std::vector<double> allocate(std::span<const double> probs, std::size_t n) {
  if (probs.size() < 2) throw std::invalid_argument("allocate needs at least one sector and the dummy");
  const std::size_t n_sectors = probs.size() - 1;
  if (n == 0 || n > n_sectors) {
    throw std::invalid_argument("top-n must lie in [1, " + std::to_string(n_sectors) + "]");
  }
  std::vector<std::size_t> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  std::vector<double> w(probs.size(), 0.0);
  for (std::size_t r = 0; r < n; ++r) w[idx[r]] = 1.0 / static_cast<double>(n);
  return w;  // index n_sectors is both the dummy and the cash slot
}

EquityCurve replay_weights(const SectorPanel& panel, std::size_t first, const std::vector<std::vector<double>>& weights,
                           double cost_rate) {
  const std::size_t n_s = panel.n_sectors();
  if (first + weights.size() >= panel.n_days()) throw std::out_of_range("backtest runs past the panel end");
  EquityCurve curve;
  curve.dates.push_back(panel.dates.at(first));
  curve.values.push_back(1.0);
  std::vector<double> held(n_s + 1, 0.0);
  held[n_s] = 1.0;  // start in cash
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const auto& w = weights[i];
    if (w.size() != n_s + 1) throw std::invalid_argument("weight vector must cover every sector plus cash");
    const auto t = static_cast<Eigen::Index>(first + i);
    double turnover = 0.0;
    for (std::size_t s = 0; s <= n_s; ++s) turnover += std::abs(w[s] - held[s]);
    double r = 0.0;
    for (std::size_t s = 0; s < n_s; ++s) {
      const auto si = static_cast<Eigen::Index>(s);
      r += w[s] * (panel.close(si, t + 1) / panel.close(si, t) - 1.0);
    }
    r -= cost_rate * turnover / 2.0;
    curve.daily_returns.push_back(r);
    curve.values.push_back(curve.values.back() * (1.0 + r));
    curve.dates.push_back(panel.dates.at(first + i + 1));
    // Drifted holdings after the day's moves, for the next turnover charge.
    double total = 0.0;
    for (std::size_t s = 0; s <= n_s; ++s) {
      const double growth =
          s < n_s ? panel.close(static_cast<Eigen::Index>(s), t + 1) / panel.close(static_cast<Eigen::Index>(s), t)
                  : 1.0;
      held[s] = w[s] * growth;
      total += held[s];
    }
    if (total > 0.0) {
      for (auto& h : held) h /= total;
    }
  }
  return curve;
}

EquityCurve run_backtest(const SectorPanel& panel, const FeatureTensor& features, std::size_t begin,
                         std::size_t end, const ProbsFn& policy, const BacktestConfig& config) {
  EnvConfig ec;
  ec.seq_len = config.seq_len;
  ec.top_n = 1;
  const SectorEnv env(panel, features, ec, begin, end);
  std::vector<Observation> obs;
  for (std::size_t t = env.first_t(); t <= env.last_t(); ++t) obs.push_back(env.observe(t));
  std::vector<std::vector<double>> weights;
  weights.reserve(obs.size());
  constexpr std::size_t kChunk = 256;
  for (std::size_t off = 0; off < obs.size(); off += kChunk) {
    const std::size_t n = std::min(kChunk, obs.size() - off);
    const auto probs = policy(std::span<const Observation>(obs).subspan(off, n));
    if (probs.size() != n) throw ContractError("policy returned the wrong number of distributions");
    for (const auto& p : probs) {
      check_distribution(p, env.n_targets());
      weights.push_back(allocate(p, config.top_n));
    }
  }
  return replay_weights(panel, env.first_t(), weights, config.cost_rate);
}

double max_drawdown(std::span<const double> values) {
  double peak = -std::numeric_limits<double>::infinity(), mdd = 0.0;
  for (double v : values) {
    peak = std::max(peak, v);
    mdd = std::min(mdd, v / peak - 1.0);
  }
  return mdd;
}

MetricsReport compute_metrics(std::span<const double> values) {
  if (values.size() < 2) throw std::invalid_argument("metrics need at least two curve points");
  for (double v : values) {
    if (!(v > 0.0)) throw std::invalid_argument("equity values must be positive");
  }
  MetricsReport m;
  m.n_days = values.size() - 1;
  const double n = static_cast<double>(m.n_days);
  m.cumulative_return = values.back() / values.front() - 1.0;
  m.annualized_return = std::pow(1.0 + m.cumulative_return, kTradingDays / n) - 1.0;
  std::vector<double> r(m.n_days);
  for (std::size_t i = 0; i < m.n_days; ++i) r[i] = values[i + 1] / values[i] - 1.0;
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : r) ss += (x - mean) * (x - mean);
  const double sd = m.n_days > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  m.annualized_volatility = sd * std::sqrt(kTradingDays);
  if (sd > 0.0) m.sharpe_ratio = mean / sd * std::sqrt(kTradingDays);
  m.max_drawdown = max_drawdown(values);
  return m;
}

MetricsReport compute_metrics(const EquityCurve& curve) { return compute_metrics(curve.values); }

std::string format_metrics_kv(const MetricsReport& m) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "cumulative_return=" << m.cumulative_return << '\n';
  os << "annualized_return=" << m.annualized_return << '\n';
  os << "annualized_volatility=" << m.annualized_volatility << '\n';
  os << "sharpe_ratio=";
  if (m.sharpe_ratio) {
    os << *m.sharpe_ratio;
  } else {
    os << "undefined";
  }
  os << '\n';
  os << "max_drawdown=" << m.max_drawdown << '\n';
  return os.str();
}

std::string format_metrics_table(const MetricsReport& m, const std::string& label) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << std::left << std::setw(14) << "model" << std::right << std::setw(10) << "CR(%)" << std::setw(10) << "AR(%)"
     << std::setw(10) << "AV(%)" << std::setw(10) << "SR" << std::setw(10) << "MDD(%)" << '\n';
  os << std::left << std::setw(14) << label << std::right << std::setw(10) << 100 * m.cumulative_return
     << std::setw(10) << 100 * m.annualized_return << std::setw(10) << 100 * m.annualized_volatility;
  if (m.sharpe_ratio) {
    os << std::setw(10) << *m.sharpe_ratio;
  } else {
    os << std::setw(10) << "n/a";
  }
  os << std::setw(10) << 100 * m.max_drawdown << '\n';
  return os.str();
}

std::string format_equity_curve(const EquityCurve& curve) {
  std::ostringstream os;
  os << "date,value,daily_return\n" << std::setprecision(17);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    os << curve.dates[i] << ',' << curve.values[i] << ',' << (i == 0 ? 0.0 : curve.daily_returns[i - 1]) << '\n';
  }
  return os.str();
}

}  // namespace qsector
