// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../unit/check.hpp"
#include "qsector/pipeline.hpp"
#include "qsector/qsim.hpp"

using namespace qsector;
namespace fs = std::filesystem;
namespace qs = qsector::qsim;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass = false;
  std::string detail;
};

Verdict verdict(bool pass, const std::string& detail) { return {pass, detail}; }

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

// --- 1 ---------------------------------------------------------------------

// Angle embedding with a random rotation axis per wire, then two layers of
// random-axis trainable rotations and a CNOT chain in a random direction.
qs::Circuit random_circuit(std::mt19937_64& rng) {
  const qs::GateKind rot[] = {qs::GateKind::RX, qs::GateKind::RY, qs::GateKind::RZ};
  std::uniform_int_distribution<int> axis(0, 2), coin(0, 1);
  qs::Circuit c(4, 4, 8);
  for (std::size_t w = 0; w < 4; ++w) {
    c.add({qs::GateKind::RY, w, 0, qs::AngleSource::Input, w, 0.0});
    c.add({rot[axis(rng)], w, 0, qs::AngleSource::Input, w, 0.0});
  }
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t w = 0; w < 4; ++w) c.add({rot[axis(rng)], w, 0, qs::AngleSource::Theta, l * 4 + w, 0.0});
    const bool down = coin(rng);
    for (std::size_t w = 0; w + 1 < 4; ++w) {
      if (down) c.add({qs::GateKind::CNOT, w, w + 1});
      else c.add({qs::GateKind::CNOT, w + 1, w});
    }
  }
  c.set_measured({0, 1, 2, 3});
  return c;
}

Verdict criterion_1() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  const double h = 1e-4;
  double worst = 0.0;
  std::size_t checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    // Half random structures, half the fixed QNN ansatz.
    const qs::Circuit c = trial % 2 ? random_circuit(rng) : qs::qnn_circuit({4, 2, qs::Entangler::LinearChain});
    std::vector<double> x(4), th(8);
    for (auto& v : x) v = angle(rng);
    for (auto& v : th) v = angle(rng);
    for (std::size_t out = 0; out < 4; ++out) {
      std::vector<double> cot(4, 0.0);
      cot[out] = 1.0;
      const auto g = c.param_shift(x, th, cot);
      auto fd = [&](std::vector<double>& slot, std::size_t i) {
        const double orig = slot[i];
        slot[i] = orig + h;
        const double fp = c.expectations(x, th)[out];
        slot[i] = orig - h;
        const double fm = c.expectations(x, th)[out];
        slot[i] = orig;
        return (fp - fm) / (2 * h);
      };
      for (std::size_t i = 0; i < 8; ++i, ++checked) worst = std::max(worst, std::abs(g.d_theta[i] - fd(th, i)));
      for (std::size_t i = 0; i < 4; ++i, ++checked) worst = std::max(worst, std::abs(g.d_inputs[i] - fd(x, i)));
    }
  }
  const double secs = seconds_since(t0);
  return verdict(worst < 1e-5 && secs < 10.0, std::to_string(checked) + " partials, max abs err " +
                                                  fmt("%.2e", worst) + ", " + fmt("%.2fs", secs));
}

// --- 2 ---------------------------------------------------------------------

Verdict criterion_2() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> angle(-2 * std::numbers::pi, 2 * std::numbers::pi);
  const qs::GateKind kinds[] = {qs::GateKind::RX, qs::GateKind::RY, qs::GateKind::RZ, qs::GateKind::CNOT,
                                qs::GateKind::CRZ};
  double worst_norm = 0.0;
  bool z_ok = true;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 6;
    qs::Statevector s(n);
    for (int g = 0; g < 100; ++g) {
      auto kind = kinds[rng() % (n > 1 ? 5 : 3)];
      const std::size_t w = rng() % n;
      std::size_t t = rng() % n;
      if (kind == qs::GateKind::CNOT || kind == qs::GateKind::CRZ) {
        while (t == w) t = rng() % n;
      }
      qs::apply_gate(s, kind, w, angle(rng), t);
      worst_norm = std::max(worst_norm, std::abs(s.norm() - 1.0));
    }
    for (std::size_t w = 0; w < n; ++w) {
      const double z = s.expectation_z(w);
      z_ok = z_ok && z >= -1.0 && z <= 1.0;
    }
  }
  return verdict(worst_norm <= 1e-12 && z_ok, "max |norm-1| " + fmt("%.2e", worst_norm) + ", <Z> in [-1,1]: " +
                                                  (z_ok ? "yes" : "no") + ", " + fmt("%.2fs", seconds_since(t0)));
}

// --- 3 ---------------------------------------------------------------------

Verdict criterion_3() {
  const auto t0 = Clock::now();
  const BackboneKind kinds[] = {BackboneKind::Mlp, BackboneKind::Lstm, BackboneKind::Transformer,
                                BackboneKind::Qnn, BackboneKind::Qasa, BackboneKind::Qrwkv};
  std::mt19937_64 rng(303);
  bool ok = true;
  std::string detail;
  for (auto kind : kinds) {
    double worst = 0.0;
    std::size_t draws = 0;
    for (std::uint64_t draw = 0; draw < 20; ++draw, ++draws) {
      auto cfg = BackboneConfig::defaults(kind);
      cfg.dropout = 0.0;
      const bool actor = draw % 2 == 0;
      Network net(actor ? HeadKind::Actor : HeadKind::Critic, cfg, 6, 5, actor ? 4 : 1, 1000 + draw);
      auto x = qtest::random_tensor({2, 5, 6}, rng, -2, 2);
      auto w = qtest::random_tensor({2, actor ? 4u : 1u}, rng);
      auto loss = [&](ad::Tape& tape) {
        return ad::sum(ad::mul(net.forward(tape, tape.constant(x), {}), tape.constant(w)));
      };
      worst = std::max(worst, qtest::finite_difference_check(net.params().all(), loss, rng, 12).worst);
    }
    ok = ok && worst < 1e-4;
    detail += backbone_kind_name(kind) + " " + fmt("%.1e", worst) + "; ";
  }
  const double secs = seconds_since(t0);
  return verdict(ok && secs < 120.0, "20 draws each, worst rel err: " + detail + fmt("%.1fs", secs));
}

// --- 4 ---------------------------------------------------------------------

Verdict criterion_4() {
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(-3, 3), p(0, 1);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng() % 8;
    std::vector<double> r(n), v(n);
    for (auto& x : r) x = u(rng);
    for (auto& x : v) x = u(rng);
    const double g = p(rng), l = p(rng);
    const auto got = compute_gae(r, v, g, l);
    for (std::size_t t = 0; t < n; ++t) {
      double want = 0.0;
      for (std::size_t k = t; k < n; ++k) {
        const double next = k + 1 < n ? v[k + 1] : 0.0;
        want += std::pow(g * l, static_cast<double>(k - t)) * (r[k] + g * next - v[k]);
      }
      worst = std::max(worst, std::abs(got.advantages[t] - want));
    }
  }
  return verdict(worst < 1e-10, "1000 trajectories, max abs err " + fmt("%.2e", worst));
}

// --- 5 ---------------------------------------------------------------------

Verdict criterion_5() {
  const auto panel = synth_panel({12, 260, 5, Regime::Gbm});
  const auto features = build_features(panel);
  std::mt19937_64 rng(505);
  std::size_t draws = 0, mismatches = 0, off_set = 0;
  for (std::size_t top_n : {1, 3, 6, 11}) {
    SectorEnv env(panel, features, {10, top_n, RankBy::Level}, 0, panel.n_days() - 1);
    for (int k = 0; k < 2500; ++k, ++draws) {
      const std::size_t t = env.first_t() + rng() % env.episode_length();
      const std::size_t a = rng() % env.n_targets();
      const double r = env.step(env.observe(t), a).reward;
      // The set of the top_n largest next-day shares, ties to the lower index.
      std::vector<std::size_t> order(panel.n_sectors());
      for (std::size_t s = 0; s < order.size(); ++s) order[s] = s;
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t x, std::size_t y) { return panel.cap_share(x, t + 1) > panel.cap_share(y, t + 1); });
      const std::set<std::size_t> top(order.begin(), order.begin() + static_cast<long>(top_n));
      const double want = top.count(a) ? 1.0 : -0.1;
      mismatches += r != want;
      off_set += r != 1.0 && r != -0.1;
    }
  }
  return verdict(mismatches == 0 && off_set == 0, std::to_string(draws) + " draws, " + std::to_string(mismatches) +
                                                      " mismatches, " + std::to_string(off_set) + " outside {1, -0.1}");
}

// --- 6 ---------------------------------------------------------------------

// Best trailing 10-episode mean per-step reward over 200 episodes.
double learning_run(BackboneKind kind) {
  const auto panel = synth_panel({3, 200, 7, Regime::DeterministicLeader});
  const auto features = build_features(panel);
  EnvConfig ec;
  ec.top_n = 1;
  SectorEnv env(panel, features, ec, 0, panel.n_days() - 1);
  const auto bc = BackboneConfig::defaults(kind);
  ActorCritic agent(bc, bc, features.dim(), ec.seq_len, env.n_targets(), 1);
  PpoConfig pc;
  pc.epochs = 200;
  std::vector<double> r;
  double best = -1.0;
  train(env, agent, pc, 1, [&](const EpisodeLog& e) {
    r.push_back(e.mean_reward());
    if (r.size() >= 10) {
      double s = 0.0;
      for (std::size_t i = r.size() - 10; i < r.size(); ++i) s += r[i];
      best = std::max(best, s / 10.0);
    }
  });
  return best;
}

Verdict criterion_6() {
  const auto t0 = Clock::now();
  const double mlp = learning_run(BackboneKind::Mlp);
  const double qnn = learning_run(BackboneKind::Qnn);
  const double secs = seconds_since(t0);
  return verdict(mlp >= 0.9 && qnn >= 0.7 && secs < 300.0,
                 "trailing-10 mean reward mlp " + fmt("%.3f", mlp) + " (>= 0.9), qnn " + fmt("%.3f", qnn) +
                     " (>= 0.7), " + fmt("%.1fs", secs));
}

// --- 7 ---------------------------------------------------------------------

Verdict criterion_7() {
  const auto cr = compute_metrics(std::vector<double>{1.0, 1.1}).cumulative_return;
  const auto mdd = compute_metrics(std::vector<double>{100, 120, 90, 110}).max_drawdown;
  const bool fixtures = std::abs(cr - 0.1) <= 1e-12 && std::abs(mdd + 0.25) <= 1e-12;
  std::mt19937_64 rng(707);
  std::normal_distribution<double> g(0.0, 0.03);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> v{1.0 + rng() % 100};
    const std::size_t n = 1 + rng() % 300;
    for (std::size_t i = 0; i < n; ++i) v.push_back(v.back() * std::exp(g(rng)));
    double oracle = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i)
      for (std::size_t j = i; j < v.size(); ++j) oracle = std::min(oracle, v[j] / v[i] - 1.0);
    mismatches += max_drawdown(v) != oracle;
  }
  return verdict(fixtures && mismatches == 0, "CR " + fmt("%.15g", cr) + ", MDD " + fmt("%.15g", mdd) + ", " +
                                                  std::to_string(mismatches) + "/1000 curves differ from oracle");
}

// --- 8 ---------------------------------------------------------------------

struct IdentityTally {
  std::size_t checked = 0;
  double worst = 0.0;
  void add(const MetricsReport& m) {
    const double lhs = std::pow(1.0 + m.annualized_return, static_cast<double>(m.n_days) / kTradingDays);
    worst = std::max(worst, std::abs(lhs - (1.0 + m.cumulative_return)));
    ++checked;
  }
};

void random_backtests(IdentityTally& tally) {
  std::mt19937_64 rng(808);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t sectors = 2 + rng() % 10;
    const auto panel = synth_panel({sectors, 120 + rng() % 300, rng(), Regime::Gbm});
    const auto features = build_features(panel);
    std::mt19937_64 policy_rng(rng());
    ProbsFn policy = [&](std::span<const Observation> obs) {
      std::vector<std::vector<double>> out;
      for (std::size_t i = 0; i < obs.size(); ++i) {
        std::vector<double> p(sectors + 1);
        double s = 0.0;
        for (auto& x : p) s += x = std::uniform_real_distribution<double>(0.01, 1.0)(policy_rng);
        for (auto& x : p) x /= s;
        out.push_back(std::move(p));
      }
      return out;
    };
    BacktestConfig bc{1 + rng() % sectors, 10, (rng() % 3) * 0.001};
    const std::size_t begin = 60 + rng() % 30;
    tally.add(compute_metrics(run_backtest(panel, features, begin, panel.n_days() - 1, policy, bc)));
  }
}

// --- 9 ---------------------------------------------------------------------

ExperimentConfig repro_config(const fs::path& out) {
  auto cfg = parse_config(R"(
[data]
source = synth
synth_sectors = 6
synth_days = 260
synth_seed = 9
[env]
top_n = 2
[model]
kind = lstm
hidden = 16
dropout = 0.1
[ppo]
epochs = 3
ppo_epochs = 3
[run]
seed = 99
)");
  cfg.out = out.string();
  return cfg;
}

Verdict criterion_9(const fs::path& root) {
  const auto a = root / "repro_a", b = root / "repro_b";
  const auto ta = run_train(repro_config(a));
  const auto tb = run_train(repro_config(b));
  const bool ckpt = read_text(ta.checkpoint_path) == read_text(tb.checkpoint_path);
  const bool curve = read_text(ta.rewards_path) == read_text(tb.rewards_path);
  return verdict(ckpt && curve, std::string("model.ckpt ") + (ckpt ? "identical" : "DIFFERS") + ", rewards.csv " +
                                    (curve ? "identical" : "DIFFERS"));
}

// --- 10 --------------------------------------------------------------------

Verdict criterion_10(const fs::path& root, IdentityTally& tally) {
  const auto t0 = Clock::now();
  std::vector<std::string> dirs;
  for (auto kind : comparison_backbones()) {
    ExperimentConfig cfg;
    cfg.data_source = "synth";
    cfg.synth = {47, 800, 2024, Regime::Gbm};
    cfg.model = BackboneConfig::defaults(kind);
    cfg.ppo.epochs = 5;
    cfg.seed = 1;
    cfg.out = (root / "e2e" / backbone_kind_name(kind)).string();
    const auto k0 = Clock::now();
    const auto tr = run_train(cfg);
    const auto bt = run_backtest_command(cfg, tr.checkpoint_path);
    tally.add(bt.metrics);
    std::cerr << "  " << backbone_kind_name(kind) << " trained and backtested in " << fmt("%.1fs", seconds_since(k0))
              << "\n";
    dirs.push_back(cfg.out);
  }
  const auto rows = compare_runs(dirs);
  std::cout << format_compare_table(rows) << std::flush;
  const bool complete = rows.size() == 5 && std::all_of(rows.begin(), rows.end(), [](const CompareRow& r) {
                          return r.complete();
                        });
  const double secs = seconds_since(t0);
  return verdict(complete && secs < 900.0, std::to_string(rows.size()) + " rows, all complete: " +
                                               (complete ? "yes" : "no") + ", " + fmt("%.1fs", secs));
}

Verdict guarded(const std::function<Verdict()>& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return verdict(false, std::string("threw: ") + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  // Optional argument: the criteria to run, e.g. "1,4,7".
  std::set<int> only;
  if (argc > 1) {
    std::stringstream ss(argv[1]);
    for (std::string item; std::getline(ss, item, ',');) only.insert(std::stoi(item));
  }
  auto wanted = [&](int c) { return only.empty() || only.count(c) > 0; };

  const auto root = fs::temp_directory_path() / ("qsector_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);

  std::vector<std::pair<int, Verdict>> results;
  IdentityTally tally;
  auto run = [&](int c, const std::function<Verdict()>& fn) {
    if (!wanted(c)) return;
    std::cerr << "running criterion " << c << "\n";
    results.emplace_back(c, guarded(fn));
  };
  run(1, criterion_1);
  run(2, criterion_2);
  run(3, criterion_3);
  run(4, criterion_4);
  run(5, criterion_5);
  run(6, criterion_6);
  run(7, criterion_7);
  run(9, [&] { return criterion_9(root); });
  run(10, [&] { return criterion_10(root, tally); });
  // The identity is checked on every backtest above plus a batch of random ones.
  run(8, [&] {
    random_backtests(tally);
    return verdict(tally.worst <= 1e-12, std::to_string(tally.checked) + " backtests, max |lhs-rhs| " +
                                             fmt("%.2e", tally.worst));
  });
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  bool all = true;
  for (const auto& [c, v] : results) {
    std::printf("criterion %2d: %s  %s\n", c, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    all = all && v.pass;
  }
  fs::remove_all(root);
  return all ? 0 : 1;
}
