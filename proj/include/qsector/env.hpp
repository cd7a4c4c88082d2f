#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsector/data.hpp"
#include "qsector/features.hpp"

namespace qsector {

inline constexpr double kHitReward = 1.0;
inline constexpr double kMissReward = -0.1;

enum class RankBy { Level, ShareChange };

RankBy parse_rank_by(const std::string& name);
std::string rank_by_name(RankBy rank_by);

struct EnvConfig {
  std::size_t seq_len = 10;
  std::size_t top_n = 10;
  RankBy rank_by = RankBy::Level;
};

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Observation {
  RowMatrix window;  // rows x_{t-L+1} .. x_t
  std::size_t t_index = 0;
};

struct StepOutcome {
  double reward = 0.0;
  std::optional<Observation> next_obs;  // empty at the terminal step
  std::vector<std::size_t> top_set;     // realized top-N on t+1
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Indices of the n sectors with the largest cap share on day t (or largest
// day-over-day change), ties to the lower index, in rank order.
std::vector<std::size_t> top_n_sectors(const SectorPanel& panel, std::size_t t, std::size_t n,
                                       RankBy rank_by = RankBy::Level);

// 1.0 when the action is a sector inside top_set, -0.1 otherwise. The dummy
// index never matches a sector.
double proxy_reward(std::size_t action, const std::vector<std::size_t>& top_set);

/// Policy evaluated on observations: a distribution over targets and a value.
struct PolicyEval {
  std::vector<double> probs;
  double value = 0.0;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::vector<PolicyEval> evaluate(std::span<const Observation> observations) = 0;
};

// Rollout record. All sequences have equal length.
struct Trajectory {
  std::vector<Observation> states;
  std::vector<std::size_t> actions;
  std::vector<double> old_log_probs;
  std::vector<double> rewards;
  std::vector<double> values;
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> entropies;

  std::size_t size() const { return actions.size(); }
  double total_reward() const;
};

/// Sector-rotation MDP over the day range [begin, end] of a panel.
///
/// Observations do not depend on actions, so an episode visits the same
/// days regardless of the policy: decisions are taken on days
/// first_t() .. end-1 and the reward for day t is scored against t+1.
class SectorEnv {
 public:
  SectorEnv(const SectorPanel& panel, const FeatureTensor& features, EnvConfig config, std::size_t begin,
            std::size_t end);

  std::size_t n_targets() const { return panel_->n_sectors() + 1; }
  std::size_t dummy() const { return panel_->n_sectors(); }
  std::size_t first_t() const { return first_t_; }
  std::size_t last_t() const { return end_ - 1; }
  std::size_t episode_length() const { return end_ - first_t_; }
  const EnvConfig& config() const { return config_; }
  const SectorPanel& panel() const { return *panel_; }
  const FeatureTensor& features() const { return *features_; }

  Observation observe(std::size_t t) const;
  Observation reset() const { return observe(first_t_); }
  StepOutcome step(const Observation& state, std::size_t action) const;

 private:
  const SectorPanel* panel_;
  const FeatureTensor* features_;
  EnvConfig config_;
  std::size_t first_t_;
  std::size_t end_;
};

// Earliest day with a full observation window of valid feature rows.
std::size_t first_observable_day(const FeatureTensor& features, std::size_t seq_len);

void check_distribution(const std::vector<double>& probs, std::size_t n_targets);

// Samples one action per day from the policy. Deterministic in seed.
Trajectory run_episode(const SectorEnv& env, Policy& policy, std::uint64_t seed);

std::string format_trajectory(const Trajectory& traj, const SectorPanel& panel);

}  // namespace qsector
