#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsector/backbones.hpp"
#include "qsector/env.hpp"
#include "qsector/optim.hpp"

namespace qsector {

struct PpoConfig {
  double gamma = 0.99;
  double clip_eps = 0.2;
  double entropy_beta = 0.01;
  std::size_t batch_size = 64;
  std::size_t ppo_epochs = 10;
  double lr_actor = 3e-4;
  double lr_critic = 1e-3;
  double gae_lambda = 0.95;
  std::size_t epochs = 100;
  bool normalize_advantages = true;  // per minibatch
  double max_grad_norm = 0.5;        // <= 0 disables clipping

  void validate() const;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;  // advantages + values
};

// delta_t = r_t + gamma V(s_{t+1}) - V(s_t) with V = 0 past the last step;
// A_t = sum_k (gamma lambda)^k delta_{t+k}. Not normalized.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda);

// (x - mean) / (std + 1e-8), population std. A single element maps to 0.
std::vector<double> normalize_advantages(std::span<const double> adv);

// Per-sample min(rho A, clip(rho, 1 - eps, 1 + eps) A).
double clipped_surrogate(double ratio, double advantage, double clip_eps);

// [B, L, d] tensor from the selected observations.
ad::Tensor stack_observations(std::span<const Observation> obs, std::span<const std::size_t> index = {});

/// Separate actor and critic networks behind the environment's Policy interface.
class ActorCritic final : public Policy {
 public:
  ActorCritic(const BackboneConfig& actor_config, const BackboneConfig& critic_config, std::size_t input_dim,
              std::size_t seq_len, std::size_t n_targets, std::uint64_t seed);

  // Evaluation mode (no dropout).
  std::vector<PolicyEval> evaluate(std::span<const Observation> observations) override;
  // Action probabilities only, [B, n_targets] row-major.
  std::vector<std::vector<double>> action_probs(std::span<const Observation> observations) const;

  Network& actor() { return actor_; }
  Network& critic() { return critic_; }
  const Network& actor() const { return actor_; }
  const Network& critic() const { return critic_; }
  std::size_t n_targets() const { return actor_.n_out(); }

 private:
  Network actor_;
  Network critic_;
};

struct UpdateStats {
  double actor_loss = 0.0;    // mean over minibatches
  double critic_loss = 0.0;
  double entropy = 0.0;       // mean policy entropy seen during the update
  double clip_fraction = 0.0; // share of samples whose ratio left [1-eps, 1+eps]
  // Largest |rho - 1| and |clipped - unclipped| on the first minibatch,
  // before any parameter change.
  double first_ratio_dev = 0.0;
  double first_branch_gap = 0.0;
  std::size_t minibatches = 0;
};

struct Optimizers {
  ad::Adam actor;
  ad::Adam critic;
  Optimizers(ActorCritic& agent, const PpoConfig& config);
};

// Fills traj.advantages/returns when empty, then runs ppo_epochs passes of
// shuffled minibatches. Throws NonFiniteError on a non-finite loss or parameter.
UpdateStats ppo_update(Trajectory& traj, ActorCritic& agent, Optimizers& opt, const PpoConfig& config,
                       std::mt19937_64& shuffle_rng, std::mt19937_64& dropout_rng);

struct EpisodeLog {
  std::size_t episode = 0;
  double total_reward = 0.0;
  double mean_entropy = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  std::size_t steps = 0;

  double mean_reward() const { return steps == 0 ? 0.0 : total_reward / static_cast<double>(steps); }
};

using EpisodeCallback = std::function<void(const EpisodeLog&)>;

// config.epochs episodes over the environment's range, each followed by a PPO
// update. Episode i samples with seed derive_seed(seed, "rollout") + i.
std::vector<EpisodeLog> train(const SectorEnv& env, ActorCritic& agent, const PpoConfig& config, std::uint64_t seed,
                              const EpisodeCallback& on_episode = {});

std::string format_reward_curve(const std::vector<EpisodeLog>& curve);

}  // namespace qsector
