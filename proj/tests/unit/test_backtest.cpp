#include <doctest.h>

#include <cmath>
#include <random>

#include "qsector/backtest.hpp"

using namespace qsector;

namespace {

double mdd_oracle(const std::vector<double>& v) {
  double worst = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i; j < v.size(); ++j) worst = std::min(worst, v[j] / v[i] - 1.0);
  return worst;
}

std::vector<double> random_curve(std::mt19937_64& rng, std::size_t n) {
  std::normal_distribution<double> g(0.0, 0.02);
  std::vector<double> v{1.0};
  for (std::size_t i = 1; i < n; ++i) v.push_back(v.back() * std::exp(g(rng)));
  return v;
}

SectorPanel flat_panel(std::size_t sectors, std::size_t days, double growth) {
  SectorPanel p;
  for (std::size_t t = 0; t < days; ++t) p.dates.push_back("2020-01-" + std::to_string(10 + t));
  for (std::size_t s = 0; s < sectors; ++s) p.sector_ids.push_back("s" + std::to_string(s));
  p.close.resize(sectors, days);
  p.cap_share = Eigen::MatrixXd::Constant(sectors, days, 1.0 / sectors);
  for (std::size_t s = 0; s < sectors; ++s)
    for (std::size_t t = 0; t < days; ++t) p.close(s, t) = std::pow(growth, t);
  return p;
}

void check_identity(const MetricsReport& m) {
  CHECK(std::abs(std::pow(1.0 + m.annualized_return, m.n_days / kTradingDays) - (1.0 + m.cumulative_return)) < 1e-12);
}

}  // namespace

TEST_CASE("allocation picks the n most probable targets") {
  auto w = allocate(std::vector<double>{0.1, 0.4, 0.2, 0.3}, 2);
  CHECK(w == std::vector<double>{0.0, 0.5, 0.0, 0.5});  // dummy share goes to cash
  w = allocate(std::vector<double>{0.25, 0.25, 0.25, 0.25}, 1);
  CHECK(w == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK_THROWS(allocate(std::vector<double>{0.5, 0.5}, 2));
  CHECK_THROWS(allocate(std::vector<double>{0.5, 0.5}, 0));
}

TEST_CASE("metric fixtures") {
  auto m = compute_metrics(std::vector<double>{1.0, 1.1});
  CHECK(std::abs(m.cumulative_return - 0.1) < 1e-12);
  CHECK(m.n_days == 1);
  CHECK(!m.sharpe_ratio.has_value());
  CHECK(std::abs(compute_metrics(std::vector<double>{100, 120, 90, 110}).max_drawdown - (-0.25)) < 1e-12);
  CHECK(max_drawdown(std::vector<double>{1, 2, 3, 4}) == 0.0);
  CHECK_THROWS(compute_metrics(std::vector<double>{1.0}));
  CHECK_THROWS(compute_metrics(std::vector<double>{1.0, 0.0}));
}

TEST_CASE("hand-derived volatility and sharpe") {
  std::vector<double> v{1.0, 1.01, 0.99};
  const double r1 = 0.01, r2 = 0.99 / 1.01 - 1.0, mu = (r1 + r2) / 2;
  const double sd = std::sqrt(((r1 - mu) * (r1 - mu) + (r2 - mu) * (r2 - mu)) / 1.0);
  auto m = compute_metrics(v);
  CHECK(m.annualized_volatility == doctest::Approx(sd * std::sqrt(252.0)).epsilon(1e-13));
  CHECK(*m.sharpe_ratio == doctest::Approx(mu / sd * std::sqrt(252.0)).epsilon(1e-13));
  check_identity(m);
}

TEST_CASE("streaming drawdown equals the quadratic oracle") {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 300; ++i) {
    auto v = random_curve(rng, 2 + rng() % 60);
    CHECK(std::abs(max_drawdown(v) - mdd_oracle(v)) < 1e-15);
    auto m = compute_metrics(v);
    check_identity(m);
    CHECK(m.max_drawdown <= 0.0);
    CHECK(m.max_drawdown >= -1.0);
  }
}

TEST_CASE("metrics are scale invariant") {
  std::mt19937_64 rng(2);
  auto v = random_curve(rng, 40);
  auto scaled = v;
  for (auto& x : scaled) x *= 37.5;
  auto a = compute_metrics(v), b = compute_metrics(scaled);
  CHECK(a.cumulative_return == doctest::Approx(b.cumulative_return).epsilon(1e-12));
  CHECK(a.max_drawdown == doctest::Approx(b.max_drawdown).epsilon(1e-12));
  CHECK(a.annualized_volatility == doctest::Approx(b.annualized_volatility).epsilon(1e-10));
}

TEST_CASE("a monotone fall reversed has no drawdown") {
  std::vector<double> down{5, 4, 3, 2, 1};
  CHECK(max_drawdown(down) == doctest::Approx(-0.8));
  std::vector<double> up(down.rbegin(), down.rend());
  CHECK(max_drawdown(up) == 0.0);
}

TEST_CASE("replay: all cash stays flat, full investment compounds") {
  auto p = flat_panel(2, 20, 1.01);
  std::vector<std::vector<double>> cash(10, {0.0, 0.0, 1.0}), invested(10, {0.5, 0.5, 0.0});
  auto c = replay_weights(p, 3, cash);
  for (double v : c.values) CHECK(v == 1.0);
  CHECK(c.dates.front() == p.dates[3]);
  CHECK(c.size() == 11);
  auto g = replay_weights(p, 3, invested);
  for (std::size_t t = 0; t < g.size(); ++t) CHECK(g.values[t] == doctest::Approx(std::pow(1.01, t)).epsilon(1e-13));
  CHECK_THROWS(replay_weights(p, 10, invested));

  // Leaving cash entirely is one unit of one-way turnover.
  auto costly = replay_weights(p, 3, invested, 0.002);
  CHECK(costly.daily_returns[0] == doctest::Approx(0.01 - 0.002).epsilon(1e-13));
  CHECK(costly.daily_returns[1] == doctest::Approx(0.01).epsilon(1e-13));
}

TEST_CASE("replay matches an independent portfolio oracle") {
  auto p = synth_panel({5, 120, 3, Regime::Gbm});
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> w;
  for (int i = 0; i < 50; ++i) {
    std::vector<double> probs(6);
    for (auto& x : probs) x = std::uniform_real_distribution<double>(0, 1)(rng);
    w.push_back(allocate(probs, 2));
  }
  auto curve = replay_weights(p, 60, w);
  double value = 1.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    // Value of each position after one day, summed.
    double next = value * w[i][5];
    for (Eigen::Index s = 0; s < 5; ++s) next += value * w[i][s] * p.close(s, 61 + i) / p.close(s, 60 + i);
    value = next;
    CHECK(std::abs(curve.values[i + 1] - value) < 1e-12);
  }
}

TEST_CASE("backtest runs the policy from the first observable day") {
  auto p = synth_panel({4, 150, 5, Regime::Gbm});
  auto f = build_features(p);
  ProbsFn uniform = [](std::span<const Observation> obs) {
    return std::vector<std::vector<double>>(obs.size(), std::vector<double>(5, 0.2));
  };
  auto curve = run_backtest(p, f, 100, 149, uniform, {2, 10, 0.0});
  CHECK(curve.dates.front() == p.dates[100]);
  CHECK(curve.dates.back() == p.dates[149]);
  CHECK(curve.daily_returns.size() == 49);
  check_identity(compute_metrics(curve));
  ProbsFn bad = [](std::span<const Observation> obs) {
    return std::vector<std::vector<double>>(obs.size(), std::vector<double>(5, 0.3));
  };
  CHECK_THROWS_AS(run_backtest(p, f, 100, 149, bad, {2, 10, 0.0}), ContractError);
}

TEST_CASE("metric text formats") {
  auto kv = format_metrics_kv(compute_metrics(std::vector<double>{1.0, 1.1}));
  CHECK(kv.find("sharpe_ratio=undefined\n") != std::string::npos);
  CHECK(std::count(kv.begin(), kv.end(), '\n') == 5);
  auto table = format_metrics_table(compute_metrics(std::vector<double>{1.0, 1.1, 1.2}), "mlp");
  CHECK(table.find("mlp") != std::string::npos);
  EquityCurve c{{"a", "b"}, {1.0, 1.5}, {0.5}};
  CHECK(format_equity_curve(c).rfind("date,value,daily_return\n", 0) == 0);
}
