#include "qsector/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "qsector/rng.hpp"

namespace qsector {

using ad::Tape;
using ad::Tensor;
using ad::Var;

void PpoConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw std::invalid_argument("gae_lambda must lie in [0, 1]");
  if (!(clip_eps > 0.0)) throw std::invalid_argument("clip_eps must be positive");
  if (!(entropy_beta >= 0.0)) throw std::invalid_argument("entropy_beta must be non-negative");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (ppo_epochs == 0) throw std::invalid_argument("ppo_epochs must be positive");
  if (!(lr_actor > 0.0) || !(lr_critic > 0.0)) throw std::invalid_argument("learning rates must be positive");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, double gamma, double lambda) {
  if (rewards.size() != values.size()) {
    throw std::invalid_argument("compute_gae: " + std::to_string(rewards.size()) + " rewards but " +
                                std::to_string(values.size()) + " values");
  }
  const std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t t = n; t-- > 0;) {
    const double next_v = t + 1 < n ? values[t + 1] : 0.0;
    const double delta = rewards[t] + gamma * next_v - values[t];
    running = delta + gamma * lambda * running;
    out.advantages[t] = running;
    out.returns[t] = running + values[t];
  }
  return out;
}

std::vector<double> normalize_advantages(std::span<const double> adv) {
  std::vector<double> out(adv.begin(), adv.end());
  if (out.empty()) return out;
  const double n = static_cast<double>(out.size());
  const double mu = std::accumulate(out.begin(), out.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : out) ss += (a - mu) * (a - mu);
  const double sd = std::sqrt(ss / n);
  for (double& a : out) a = (a - mu) / (sd + 1e-8);
  return out;
}

double clipped_surrogate(double ratio, double advantage, double clip_eps) {
  const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
  return std::min(ratio * advantage, clipped * advantage);
}

Tensor stack_observations(std::span<const Observation> obs, std::span<const std::size_t> index) {
  const std::size_t b = index.empty() ? obs.size() : index.size();
  if (b == 0) throw std::invalid_argument("empty observation batch");
  const auto& first = obs[index.empty() ? 0 : index[0]].window;
  const auto len = static_cast<std::size_t>(first.rows()), d = static_cast<std::size_t>(first.cols());
  Tensor x({b, len, d});
  double* dst = x.data().data();
  for (std::size_t i = 0; i < b; ++i) {
    const auto& w = obs[index.empty() ? i : index[i]].window;
    if (static_cast<std::size_t>(w.rows()) != len || static_cast<std::size_t>(w.cols()) != d) {
      throw ad::ShapeError("observation windows differ in shape");
    }
    std::copy(w.data(), w.data() + len * d, dst + i * len * d);
  }
  return x;
}

ActorCritic::ActorCritic(const BackboneConfig& actor_config, const BackboneConfig& critic_config,
                         std::size_t input_dim, std::size_t seq_len, std::size_t n_targets, std::uint64_t seed)
    : actor_(HeadKind::Actor, actor_config, input_dim, seq_len, n_targets, derive_seed(seed, "actor.init")),
      critic_(HeadKind::Critic, critic_config, input_dim, seq_len, 1, derive_seed(seed, "critic.init")) {
  if (n_targets < 2) throw std::invalid_argument("need at least two targets");
}

std::vector<std::vector<double>> ActorCritic::action_probs(std::span<const Observation> observations) const {
  Tape tape;
  Var x = tape.constant(stack_observations(observations));
  const Tensor& p = ad::softmax(actor_.forward(tape, x, {})).value();
  std::vector<std::vector<double>> out(observations.size());
  const std::size_t a = p.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i].assign(p.data().begin() + i * a, p.data().begin() + (i + 1) * a);
  return out;
}

std::vector<PolicyEval> ActorCritic::evaluate(std::span<const Observation> observations) {
  auto probs = action_probs(observations);
  Tape tape;
  Var x = tape.constant(stack_observations(observations));
  const Tensor& v = critic_.forward(tape, x, {}).value();
  std::vector<PolicyEval> out(observations.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].probs = std::move(probs[i]);
    out[i].value = v[i];
  }
  return out;
}

Optimizers::Optimizers(ActorCritic& agent, const PpoConfig& config)
    : actor(agent.actor().params().all(), ad::AdamConfig{config.lr_actor}),
      critic(agent.critic().params().all(), ad::AdamConfig{config.lr_critic}) {}

namespace {

void check_params_finite(const ad::ParameterSet& params, const char* which) {
  for (const auto* p : params.all()) {
    for (double x : p->value.data()) {
      if (!std::isfinite(x)) throw NonFiniteError(std::string(which) + " parameter " + p->name + " became non-finite");
    }
  }
}

[[noreturn]] void non_finite_loss(const char* which, double loss, std::size_t epoch, std::size_t batch,
                                  const std::vector<double>& adv, const Tensor& ratio) {
  std::ostringstream os;
  os << which << " loss is non-finite (" << loss << ") at ppo epoch " << epoch << ", minibatch " << batch
     << "; advantages [" << *std::min_element(adv.begin(), adv.end()) << ", "
     << *std::max_element(adv.begin(), adv.end()) << "]";
  if (ratio.size() > 0) {
    const auto [lo, hi] = std::minmax_element(ratio.data().begin(), ratio.data().end());
    os << ", ratio [" << *lo << ", " << *hi << "]";
  }
  throw NonFiniteError(os.str());
}

}  // namespace

UpdateStats ppo_update(Trajectory& traj, ActorCritic& agent, Optimizers& opt, const PpoConfig& config,
                       std::mt19937_64& shuffle_rng, std::mt19937_64& dropout_rng) {
  config.validate();
  const std::size_t n = traj.size();
  if (n == 0) throw std::invalid_argument("empty trajectory");
  if (traj.states.size() != n || traj.old_log_probs.size() != n || traj.rewards.size() != n ||
      traj.values.size() != n) {
    throw std::invalid_argument("trajectory sequences differ in length");
  }
  if (traj.advantages.empty()) {
    auto gae = compute_gae(traj.rewards, traj.values, config.gamma, config.gae_lambda);
    traj.advantages = std::move(gae.advantages);
    traj.returns = std::move(gae.returns);
  }

  UpdateStats stats;
  std::size_t clipped = 0, seen = 0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const double eps = config.clip_eps;
  const ForwardMode mode{true, &dropout_rng};

  for (std::size_t epoch = 0; epoch < config.ppo_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t off = 0; off < n; off += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, n - off);
      const std::span<const std::size_t> idx(order.data() + off, b);
      const Tensor obs = stack_observations(traj.states, idx);

      std::vector<std::size_t> actions(b);
      Tensor old_lp({b}), ret({b});
      std::vector<double> adv(b);
      for (std::size_t i = 0; i < b; ++i) {
        actions[i] = traj.actions[idx[i]];
        old_lp[i] = traj.old_log_probs[idx[i]];
        ret[i] = traj.returns[idx[i]];
        adv[i] = traj.advantages[idx[i]];
      }
      if (config.normalize_advantages) adv = normalize_advantages(adv);

      // Actor.
      {
        Tape tape;
        Var x = tape.constant(obs);
        Var logp_all = ad::log_softmax(agent.actor().forward(tape, x, mode));
        Var entropy = ad::neg(ad::sum_last(ad::mul(ad::exp(logp_all), logp_all)));
        Var ratio = ad::exp(ad::sub(ad::gather_rows(logp_all, actions), tape.constant(old_lp)));
        Var a = tape.constant(Tensor({b}, adv));
        Var unclipped = ad::mul(ratio, a);
        Var clipped_term = ad::mul(ad::clamp(ratio, 1.0 - eps, 1.0 + eps), a);
        Var surrogate = ad::minimum(unclipped, clipped_term);
        Var loss = ad::sub(ad::neg(ad::mean(surrogate)), ad::scale(ad::mean(entropy), config.entropy_beta));
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) non_finite_loss("actor", lv, epoch, off / config.batch_size, adv, ratio.value());

        const Tensor& rv = ratio.value();
        for (std::size_t i = 0; i < b; ++i) {
          if (rv[i] < 1.0 - eps || rv[i] > 1.0 + eps) ++clipped;
          if (stats.minibatches == 0) {
            stats.first_ratio_dev = std::max(stats.first_ratio_dev, std::abs(rv[i] - 1.0));
            stats.first_branch_gap =
                std::max(stats.first_branch_gap, std::abs(unclipped.value()[i] - clipped_term.value()[i]));
          }
        }
        seen += b;
        stats.actor_loss += lv;
        const auto ent = entropy.value().data();
        stats.entropy += std::accumulate(ent.begin(), ent.end(), 0.0) / static_cast<double>(b);

        opt.actor.zero_grad();
        tape.backward(loss);
        if (config.max_grad_norm > 0.0) ad::clip_grad_norm(agent.actor().params().all(), config.max_grad_norm);
        opt.actor.step();
      }

      // Critic.
      {
        Tape tape;
        Var x = tape.constant(obs);
        Var v = ad::reshape(agent.critic().forward(tape, x, mode), {b});
        Var loss = ad::mean(ad::square(ad::sub(v, tape.constant(ret))));
        const double lv = loss.value().item();
        if (!std::isfinite(lv)) non_finite_loss("critic", lv, epoch, off / config.batch_size, adv, Tensor());
        stats.critic_loss += lv;
        opt.critic.zero_grad();
        tape.backward(loss);
        if (config.max_grad_norm > 0.0) ad::clip_grad_norm(agent.critic().params().all(), config.max_grad_norm);
        opt.critic.step();
      }
      ++stats.minibatches;
    }
  }
  check_params_finite(agent.actor().params(), "actor");
  check_params_finite(agent.critic().params(), "critic");

  const double m = static_cast<double>(stats.minibatches);
  stats.actor_loss /= m;
  stats.critic_loss /= m;
  stats.entropy /= m;
  stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(seen);
  return stats;
}

std::vector<EpisodeLog> train(const SectorEnv& env, ActorCritic& agent, const PpoConfig& config, std::uint64_t seed,
                              const EpisodeCallback& on_episode) {
  config.validate();
  if (agent.n_targets() != env.n_targets()) {
    throw std::invalid_argument("agent has " + std::to_string(agent.n_targets()) + " targets, environment " +
                                std::to_string(env.n_targets()));
  }
  const std::uint64_t rollout_base = derive_seed(seed, "rollout");
  auto shuffle_rng = make_rng(seed, "minibatch");
  auto dropout_rng = make_rng(seed, "dropout");
  Optimizers opt(agent, config);

  std::vector<EpisodeLog> curve;
  curve.reserve(config.epochs);
  for (std::size_t ep = 0; ep < config.epochs; ++ep) {
    Trajectory traj = run_episode(env, agent, rollout_base + ep);
    const UpdateStats stats = ppo_update(traj, agent, opt, config, shuffle_rng, dropout_rng);
    EpisodeLog log;
    log.episode = ep;
    log.total_reward = traj.total_reward();
    log.steps = traj.size();
    log.mean_entropy =
        std::accumulate(traj.entropies.begin(), traj.entropies.end(), 0.0) / static_cast<double>(traj.size());
    log.actor_loss = stats.actor_loss;
    log.critic_loss = stats.critic_loss;
    curve.push_back(log);
    if (on_episode) on_episode(log);
  }
  return curve;
}

std::string format_reward_curve(const std::vector<EpisodeLog>& curve) {
  std::ostringstream os;
  os << "episode,total_reward,mean_entropy,actor_loss,critic_loss\n" << std::setprecision(17);
  for (const auto& e : curve) {
    os << e.episode << ',' << e.total_reward << ',' << e.mean_entropy << ',' << e.actor_loss << ',' << e.critic_loss
       << '\n';
  }
  return os.str();
}

}  // namespace qsector
