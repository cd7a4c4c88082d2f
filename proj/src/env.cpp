#include "qsector/env.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace qsector {

RankBy parse_rank_by(const std::string& name) {
  if (name == "level") return RankBy::Level;
  if (name == "share_change") return RankBy::ShareChange;
  throw std::invalid_argument("unknown rank_by '" + name + "' (expected level or share_change)");
}

std::string rank_by_name(RankBy rank_by) { return rank_by == RankBy::Level ? "level" : "share_change"; }

std::vector<std::size_t> top_n_sectors(const SectorPanel& panel, std::size_t t, std::size_t n, RankBy rank_by) {
  const std::size_t n_s = panel.n_sectors();
  if (t >= panel.n_days()) {
    throw std::out_of_range("day " + std::to_string(t) + " outside panel of " + std::to_string(panel.n_days()));
  }
  if (n > n_s) throw std::invalid_argument("top_n larger than sector count");
  std::vector<double> key(n_s);
  for (std::size_t s = 0; s < n_s; ++s) {
    const auto si = static_cast<Eigen::Index>(s), ti = static_cast<Eigen::Index>(t);
    key[s] = panel.cap_share(si, ti);
    if (rank_by == RankBy::ShareChange && t > 0) key[s] -= panel.cap_share(si, ti - 1);
  }
  std::vector<std::size_t> idx(n_s);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  idx.resize(n);
  return idx;
}

double proxy_reward(std::size_t action, const std::vector<std::size_t>& top_set) {
  return std::find(top_set.begin(), top_set.end(), action) != top_set.end() ? kHitReward : kMissReward;
}

double Trajectory::total_reward() const { return std::accumulate(rewards.begin(), rewards.end(), 0.0); }

std::size_t first_observable_day(const FeatureTensor& features, std::size_t seq_len) {
  return features.valid_from + seq_len - 1;
}

SectorEnv::SectorEnv(const SectorPanel& panel, const FeatureTensor& features, EnvConfig config, std::size_t begin,
                     std::size_t end)
    : panel_(&panel), features_(&features), config_(config), end_(end) {
  if (config_.seq_len == 0) throw std::invalid_argument("seq_len must be >= 1");
  if (config_.top_n == 0 || config_.top_n > panel.n_sectors()) {
    throw std::invalid_argument("top_n must lie in [1, " + std::to_string(panel.n_sectors()) + "]");
  }
  if (features.n_rows() != panel.n_days()) throw std::invalid_argument("features and panel lengths differ");
  if (end >= panel.n_days()) throw std::out_of_range("episode end beyond panel");
  first_t_ = std::max(begin, first_observable_day(features, config_.seq_len));
  if (first_t_ >= end_) {
    throw std::invalid_argument("episode range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                "] has no decision day with a full observation window");
  }
}

Observation SectorEnv::observe(std::size_t t) const {
  const std::size_t len = config_.seq_len;
  if (t + 1 < len || t - (len - 1) < features_->valid_from || t >= panel_->n_days()) {
    throw std::out_of_range("no full observation window at day " + std::to_string(t));
  }
  Observation obs;
  obs.t_index = t;
  obs.window = features_->values.middleRows(static_cast<Eigen::Index>(t + 1 - len), static_cast<Eigen::Index>(len));
  return obs;
}

StepOutcome SectorEnv::step(const Observation& state, std::size_t action) const {
  if (action >= n_targets()) {
    throw std::out_of_range("action " + std::to_string(action) + " outside [0, " + std::to_string(n_targets()) + ")");
  }
  const std::size_t t = state.t_index;
  if (t < first_t_ || t >= end_) throw std::out_of_range("step called on a terminal or out-of-range state");
  StepOutcome out;
  out.top_set = top_n_sectors(*panel_, t + 1, config_.top_n, config_.rank_by);
  out.reward = proxy_reward(action, out.top_set);
  if (t + 1 < end_) out.next_obs = observe(t + 1);
  return out;
}

void check_distribution(const std::vector<double>& probs, std::size_t n_targets) {
  if (probs.size() != n_targets) {
    throw ContractError("policy returned " + std::to_string(probs.size()) + " probabilities for " +
                        std::to_string(n_targets) + " targets");
  }
  double s = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ContractError("policy returned a negative or non-finite probability");
    s += p;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ContractError("policy probabilities sum to " + std::to_string(s));
}

Trajectory run_episode(const SectorEnv& env, Policy& policy, std::uint64_t seed) {
  Trajectory traj;
  const std::size_t steps = env.episode_length();
  traj.states.reserve(steps);
  for (std::size_t t = env.first_t(); t <= env.last_t(); ++t) traj.states.push_back(env.observe(t));

  constexpr std::size_t kChunk = 256;
  std::vector<PolicyEval> evals;
  evals.reserve(steps);
  for (std::size_t off = 0; off < steps; off += kChunk) {
    const std::size_t n = std::min(kChunk, steps - off);
    auto part = policy.evaluate(std::span<const Observation>(traj.states).subspan(off, n));
    if (part.size() != n) throw ContractError("policy returned the wrong number of evaluations");
    for (auto& e : part) evals.push_back(std::move(e));
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (std::size_t i = 0; i < steps; ++i) {
    const auto& probs = evals[i].probs;
    check_distribution(probs, env.n_targets());
    const double u = unif(rng);
    std::size_t action = probs.size();
    double cum = 0.0;
    for (std::size_t a = 0; a < probs.size(); ++a) {
      cum += probs[a];
      if (u < cum && probs[a] > 0.0) {
        action = a;
        break;
      }
    }
    if (action == probs.size()) {
      // Rounding left u above the cumulative sum: take the last supported target.
      for (std::size_t a = probs.size(); a-- > 0;) {
        if (probs[a] > 0.0) {
          action = a;
          break;
        }
      }
    }
    const StepOutcome out = env.step(traj.states[i], action);
    double entropy = 0.0;
    for (double p : probs) {
      if (p > 0.0) entropy -= p * std::log(p);
    }
    traj.actions.push_back(action);
    traj.old_log_probs.push_back(std::log(probs[action]));
    traj.rewards.push_back(out.reward);
    traj.values.push_back(evals[i].value);
    traj.entropies.push_back(entropy);
  }
  return traj;
}

std::string format_trajectory(const Trajectory& traj, const SectorPanel& panel) {
  std::ostringstream os;
  os << "date,action,log_prob,reward,value,advantage,return\n";
  for (std::size_t i = 0; i < traj.size(); ++i) {
    os << panel.dates.at(traj.states[i].t_index) << ',' << traj.actions[i] << ',' << traj.old_log_probs[i] << ','
       << traj.rewards[i] << ',' << traj.values[i] << ',' << (i < traj.advantages.size() ? traj.advantages[i] : 0.0)
       << ',' << (i < traj.returns.size() ? traj.returns[i] : 0.0) << '\n';
  }
  return os.str();
}

}  // namespace qsector
