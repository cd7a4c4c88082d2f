#include <doctest.h>

#include <cmath>
#include <random>

#include "check.hpp"
#include "qsector/ppo.hpp"

using namespace qsector;

namespace {

// A_t = sum_k (gamma lambda)^k delta_{t+k}, written as an explicit double sum.
std::vector<double> gae_oracle(const std::vector<double>& r, const std::vector<double>& v, double g, double l) {
  const std::size_t n = r.size();
  std::vector<double> out(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t k = t; k < n; ++k) {
      const double next = k + 1 < n ? v[k + 1] : 0.0;
      out[t] += std::pow(g * l, static_cast<double>(k - t)) * (r[k] + g * next - v[k]);
    }
  }
  return out;
}

struct Toy {
  SectorPanel panel;
  FeatureTensor features;
  SectorEnv env;
  explicit Toy(std::size_t days = 120)
      : panel(synth_panel({3, days, 7, Regime::DeterministicLeader})),
        features(build_features(panel)),
        env(panel, features, {10, 1, RankBy::Level}, 0, days - 1) {}
};

BackboneConfig tiny(BackboneKind kind, double dropout = 0.0) {
  auto c = BackboneConfig::defaults(kind);
  c.hidden = 16;
  c.dropout = dropout;
  return c;
}

}  // namespace

TEST_CASE("gae on hand examples") {
  auto g = compute_gae(std::vector<double>{1.0}, std::vector<double>{0.5}, 0.9, 0.8);
  CHECK(g.advantages[0] == doctest::Approx(0.5));
  CHECK(g.returns[0] == doctest::Approx(1.0));

  // delta = (1 + 0.5*2 - 1, 1 - 2) = (1, -1); A_0 = 1 + 0.5*0.5*(-1)
  g = compute_gae(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0}, 0.5, 0.5);
  CHECK(g.advantages[0] == doctest::Approx(0.75));
  CHECK(g.advantages[1] == doctest::Approx(-1.0));
  CHECK_THROWS(compute_gae(std::vector<double>{1.0}, std::vector<double>{}, 0.9, 0.9));
  CHECK(compute_gae(std::vector<double>{}, std::vector<double>{}, 0.9, 0.9).advantages.empty());
}

TEST_CASE("gae equals the brute-force double sum") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-2, 2), p(0, 1);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 1 + rng() % 12;
    std::vector<double> r(n), v(n);
    for (auto& x : r) x = u(rng);
    for (auto& x : v) x = u(rng);
    const double g = p(rng), l = p(rng);
    auto got = compute_gae(r, v, g, l);
    auto want = gae_oracle(r, v, g, l);
    for (std::size_t t = 0; t < n; ++t) {
      CHECK(std::abs(got.advantages[t] - want[t]) < 1e-10);
      CHECK(got.returns[t] == doctest::Approx(got.advantages[t] + v[t]));
    }
  }
}

TEST_CASE("lambda zero gives one-step td errors") {
  std::vector<double> r{0.1, 0.2, 0.3}, v{1.0, 2.0, 3.0};
  auto g = compute_gae(r, v, 0.9, 0.0);
  CHECK(g.advantages[0] == doctest::Approx(0.1 + 0.9 * 2.0 - 1.0));
  CHECK(g.advantages[1] == doctest::Approx(0.2 + 0.9 * 3.0 - 2.0));
  CHECK(g.advantages[2] == doctest::Approx(0.3 - 3.0));
}

TEST_CASE("advantage normalization") {
  auto z = normalize_advantages(std::vector<double>{1.0, 3.0});
  CHECK(z[0] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(z[1] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(normalize_advantages(std::vector<double>{5.0})[0] == 0.0);
}

TEST_CASE("clipped surrogate on three samples") {
  CHECK(clipped_surrogate(1.5, 2.0, 0.2) == doctest::Approx(2.4));   // capped at 1.2 * A
  CHECK(clipped_surrogate(0.5, -1.0, 0.2) == doctest::Approx(-0.8)); // pessimistic for A < 0
  CHECK(clipped_surrogate(1.1, 3.0, 0.2) == doctest::Approx(3.3));   // inside the band
  CHECK(clipped_surrogate(0.5, 1.0, 0.2) == doctest::Approx(0.5));
}

TEST_CASE("first update pass starts at ratio one") {
  Toy toy;
  ActorCritic agent(tiny(BackboneKind::Mlp), tiny(BackboneKind::Mlp), toy.features.dim(), 10, 4, 3);
  auto traj = run_episode(toy.env, agent, 5);
  PpoConfig cfg;
  cfg.ppo_epochs = 2;
  Optimizers opt(agent, cfg);
  std::mt19937_64 s(1), d(2);
  auto stats = ppo_update(traj, agent, opt, cfg, s, d);
  CHECK(stats.first_ratio_dev < 1e-12);
  CHECK(stats.first_branch_gap < 1e-12);
  CHECK(stats.minibatches == 2 * ((traj.size() + 63) / 64));
  CHECK(traj.advantages.size() == traj.size());
}

TEST_CASE("zero advantages leave only the entropy term") {
  Toy toy;
  for (double beta : {0.0, 0.5}) {
    ActorCritic agent(tiny(BackboneKind::Mlp), tiny(BackboneKind::Mlp), toy.features.dim(), 10, 4, 3);
    auto traj = run_episode(toy.env, agent, 5);
    traj.advantages.assign(traj.size(), 0.0);
    traj.returns = traj.values;
    PpoConfig cfg;
    cfg.entropy_beta = beta;
    cfg.ppo_epochs = 3;
    std::vector<qsector::ad::Storage> before;
    for (auto* p : agent.actor().params().all()) before.push_back(p->value.storage());
    const double h0 = run_episode(toy.env, agent, 6).entropies[0];
    Optimizers opt(agent, cfg);
    std::mt19937_64 s(1), d(2);
    ppo_update(traj, agent, opt, cfg, s, d);
    std::size_t changed = 0;
    auto params = agent.actor().params().all();
    for (std::size_t i = 0; i < params.size(); ++i) changed += params[i]->value.storage() != before[i];
    if (beta == 0.0) {
      CHECK(changed == 0);
    } else {
      CHECK(changed > 0);
      CHECK(run_episode(toy.env, agent, 6).entropies[0] > h0);
    }
  }
}

TEST_CASE("policy entropy is bounded by log of the target count") {
  Toy toy;
  for (auto kind : {BackboneKind::Mlp, BackboneKind::Qnn}) {
    ActorCritic agent(tiny(kind), tiny(kind), toy.features.dim(), 10, 4, 11);
    auto traj = run_episode(toy.env, agent, 1);
    for (double h : traj.entropies) {
      CHECK(h >= 0.0);
      CHECK(h <= std::log(4.0) + 1e-12);
    }
  }
}

TEST_CASE("training is deterministic in the seed") {
  Toy toy;
  PpoConfig cfg;
  cfg.epochs = 3;
  cfg.ppo_epochs = 2;
  auto run = [&](std::uint64_t seed) {
    ActorCritic agent(tiny(BackboneKind::Lstm, 0.1), tiny(BackboneKind::Lstm, 0.1), toy.features.dim(), 10, 4, seed);
    auto curve = train(toy.env, agent, cfg, seed);
    return std::make_pair(format_reward_curve(curve), agent.actor().params().all()[0]->value.storage());
  };
  auto a = run(4), b = run(4), c = run(5);
  CHECK(a == b);
  CHECK(a.first != c.first);
  CHECK(a.first.rfind("episode,total_reward,mean_entropy,actor_loss,critic_loss\n", 0) == 0);
}

TEST_CASE("a large entropy bonus keeps the policy near uniform") {
  Toy toy(200);
  PpoConfig cfg;
  cfg.entropy_beta = 10.0;
  cfg.epochs = 15;
  cfg.ppo_epochs = 4;
  ActorCritic agent(tiny(BackboneKind::Mlp), tiny(BackboneKind::Mlp), toy.features.dim(), 10, 4, 2);
  auto curve = train(toy.env, agent, cfg, 2);
  double reward = 0, steps = 0;
  for (std::size_t i = 5; i < curve.size(); ++i) {
    reward += curve[i].total_reward;
    steps += static_cast<double>(curve[i].steps);
    CHECK(curve[i].mean_entropy > 0.97 * std::log(4.0));
  }
  CHECK(reward / steps == doctest::Approx(0.175).epsilon(0.35));
}

TEST_CASE("invalid configurations are rejected") {
  PpoConfig cfg;
  cfg.gamma = 1.5;
  CHECK_THROWS(cfg.validate());
  cfg = {};
  cfg.batch_size = 0;
  CHECK_THROWS(cfg.validate());
  Toy toy;
  ActorCritic agent(tiny(BackboneKind::Mlp), tiny(BackboneKind::Mlp), toy.features.dim(), 10, 5, 3);
  CHECK_THROWS(train(toy.env, agent, PpoConfig{}, 0));
}
