#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "qsector/backbones.hpp"
#include "qsector/data.hpp"
#include "qsector/env.hpp"
#include "qsector/ppo.hpp"

namespace qsector {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Everything a train or backtest run depends on. Text form:
//
//   [section]
//   key = value      # comment
//
// Unknown sections or keys are rejected.
struct ExperimentConfig {
  // [data]: source is "file" (path required) or "synth".
  std::string data_source = "file";
  std::string data_path;
  SynthSpec synth{47, 800, 0, Regime::Gbm};

  // [split]: explicit dates when all four are set, else train_fraction.
  SplitSpec split_dates;
  double train_fraction = 0.7;

  // [env]; top_n is also the backtest's portfolio size.
  EnvConfig env;

  // [model]; layers == 0 ("auto") takes the kind's default depth and an
  // unset critic_kind ("same") reuses the actor's kind.
  BackboneConfig model;
  std::optional<BackboneKind> critic_kind;

  PpoConfig ppo;  // [ppo]

  double cost_rate = 0.0;  // [backtest]

  // [run]
  std::uint64_t seed = 0;
  std::string out = "run";

  ExperimentConfig();

  BackboneConfig actor_backbone() const;
  BackboneConfig critic_backbone() const;
  bool has_split_dates() const;
  void validate() const;
};

// Throws ConfigError naming the line and the offending field.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Every field with its effective value, in a fixed order. Parsing the output
// yields an equivalent configuration.
std::string format_config(const ExperimentConfig& config);

struct Overrides {
  std::optional<std::string> model;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data;
  std::optional<std::string> out;
  std::optional<std::size_t> top_n;
  std::optional<std::size_t> epochs;
};

// Applies command-line values on top of the file. Returns one message per
// field whose value changed.
std::vector<std::string> apply_overrides(ExperimentConfig& config, const Overrides& overrides);

}  // namespace qsector
