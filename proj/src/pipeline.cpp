#include "qsector/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "qsector/rng.hpp"

namespace qsector {

namespace fs = std::filesystem;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PreparedData prepare_data(const ExperimentConfig& config) {
  config.validate();
  PreparedData d;
  if (config.data_source == "synth") {
    d.panel = synth_panel(config.synth);
  } else {
    if (!fs::exists(config.data_path)) throw ConfigError("data.path: file '" + config.data_path + "' does not exist");
    auto loaded = load_panel(config.data_path);
    d.panel = std::move(loaded.panel);
    d.report = std::move(loaded.report);
  }
  if (config.env.top_n > d.panel.n_sectors()) {
    throw ConfigError("env.top_n: " + std::to_string(config.env.top_n) + " exceeds the panel's " +
                      std::to_string(d.panel.n_sectors()) + " sectors");
  }
  d.split = config.has_split_dates() ? resolve_split(d.panel, config.split_dates)
                                     : fraction_split(d.panel, config.train_fraction);
  FeatureConfig fc;
  fc.norm_end = d.split.train_end;
  d.features = build_features(d.panel, fc);
  return d;
}

ad::Checkpoint make_checkpoint(const ActorCritic& agent, const ExperimentConfig& config) {
  ad::Checkpoint ckpt;
  ckpt.metadata["format"] = "qsector-agent";
  ckpt.metadata["kind"] = backbone_kind_name(agent.actor().config().kind);
  ckpt.metadata["critic_kind"] = backbone_kind_name(agent.critic().config().kind);
  ckpt.metadata["input_dim"] = std::to_string(agent.actor().input_dim());
  ckpt.metadata["seq_len"] = std::to_string(agent.actor().seq_len());
  ckpt.metadata["n_targets"] = std::to_string(agent.n_targets());
  // The output directory says where artifacts went, not what was trained.
  ExperimentConfig model_config = config;
  model_config.out = ".";
  ckpt.metadata["config"] = format_config(model_config);
  ckpt.groups.emplace_back("actor", ad::snapshot(agent.actor().params()));
  ckpt.groups.emplace_back("critic", ad::snapshot(agent.critic().params()));
  return ckpt;
}

std::unique_ptr<ActorCritic> restore_agent(const ad::Checkpoint& ckpt, const ExperimentConfig& config,
                                           std::size_t input_dim) {
  auto meta = [&](const std::string& key) {
    const auto it = ckpt.metadata.find(key);
    if (it == ckpt.metadata.end()) throw ad::CheckpointError("checkpoint: metadata lacks '" + key + "'");
    return it->second;
  };
  const BackboneConfig actor = config.actor_backbone();
  const BackboneConfig critic = config.critic_backbone();
  if (meta("kind") != backbone_kind_name(actor.kind)) {
    throw KindMismatchError("checkpoint was trained with backbone '" + meta("kind") +
                            "' but the configuration requests '" + backbone_kind_name(actor.kind) + "'");
  }
  if (meta("critic_kind") != backbone_kind_name(critic.kind)) {
    throw KindMismatchError("checkpoint critic is '" + meta("critic_kind") + "' but the configuration requests '" +
                            backbone_kind_name(critic.kind) + "'");
  }
  if (meta("input_dim") != std::to_string(input_dim) || meta("seq_len") != std::to_string(config.env.seq_len)) {
    throw ConfigError("checkpoint expects input_dim " + meta("input_dim") + " and seq_len " + meta("seq_len") +
                      ", data gives " + std::to_string(input_dim) + " and " + std::to_string(config.env.seq_len));
  }
  const std::size_t n_targets = std::stoul(meta("n_targets"));
  auto agent = std::make_unique<ActorCritic>(actor, critic, input_dim, config.env.seq_len, n_targets, 0);
  ad::restore(agent->actor().params(), ckpt.group("actor"));
  ad::restore(agent->critic().params(), ckpt.group("critic"));
  return agent;
}

TrainOutputs run_train(const ExperimentConfig& config, std::ostream* log) {
  PreparedData data = prepare_data(config);
  const SectorEnv env(data.panel, data.features, config.env, data.split.train_begin, data.split.train_end);
  ActorCritic agent(config.actor_backbone(), config.critic_backbone(), data.features.dim(), config.env.seq_len,
                    env.n_targets(), derive_seed(config.seed, "agent"));
  if (log != nullptr) {
    *log << "training " << backbone_kind_name(config.model.kind) << " on " << data.panel.n_sectors()
         << " sectors, days " << data.panel.dates[env.first_t()] << " .. " << data.panel.dates[env.last_t()] << " ("
         << env.episode_length() << " steps per episode), " << config.ppo.epochs << " episodes\n";
  }
  TrainOutputs out;
  out.curve = train(env, agent, config.ppo, derive_seed(config.seed, "ppo"), [&](const EpisodeLog& e) {
    if (log != nullptr) {
      *log << "episode " << e.episode + 1 << '/' << config.ppo.epochs << "  reward " << std::fixed
           << std::setprecision(2) << e.total_reward << "  entropy " << std::setprecision(3) << e.mean_entropy
           << std::defaultfloat << '\n';
    }
  });

  fs::create_directories(config.out);
  const fs::path dir(config.out);
  out.checkpoint_path = (dir / "model.ckpt").string();
  out.rewards_path = (dir / "rewards.csv").string();
  out.config_path = (dir / "resolved.cfg").string();
  ad::save_checkpoint(make_checkpoint(agent, config), out.checkpoint_path);
  write_text(out.rewards_path, format_reward_curve(out.curve));
  write_text(out.config_path, format_config(config));
  return out;
}

BacktestOutputs run_backtest_command(const ExperimentConfig& config, const std::string& checkpoint_path) {
  PreparedData data = prepare_data(config);
  const ad::Checkpoint ckpt = ad::load_checkpoint(checkpoint_path);
  auto agent = restore_agent(ckpt, config, data.features.dim());
  BacktestConfig bc;
  bc.top_n = config.env.top_n;
  bc.seq_len = config.env.seq_len;
  bc.cost_rate = config.cost_rate;
  BacktestOutputs out;
  out.curve = run_backtest(
      data.panel, data.features, data.split.test_begin, data.split.test_end,
      [&](std::span<const Observation> obs) { return agent->action_probs(obs); }, bc);
  out.metrics = compute_metrics(out.curve);
  out.table = format_metrics_table(out.metrics, backbone_kind_name(config.model.kind));

  fs::create_directories(config.out);
  const fs::path dir(config.out);
  out.metrics_path = (dir / "metrics.txt").string();
  out.curve_path = (dir / "equity.csv").string();
  write_text(out.metrics_path, format_metrics_kv(out.metrics));
  write_text((dir / "metrics_table.txt").string(), out.table);
  write_text(out.curve_path, format_equity_curve(out.curve));
  return out;
}

MetricsReport parse_metrics_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto num = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("metrics file lacks '" + key + "'");
    return std::stod(it->second);
  };
  MetricsReport m;
  m.cumulative_return = num("cumulative_return");
  m.annualized_return = num("annualized_return");
  m.annualized_volatility = num("annualized_volatility");
  if (kv.count("sharpe_ratio") == 0) throw std::runtime_error("metrics file lacks 'sharpe_ratio'");
  if (kv["sharpe_ratio"] != "undefined") m.sharpe_ratio = std::stod(kv["sharpe_ratio"]);
  m.max_drawdown = num("max_drawdown");
  return m;
}

std::vector<CompareRow> compare_runs(const std::vector<std::string>& run_dirs) {
  std::vector<CompareRow> rows;
  for (const auto& d : run_dirs) {
    CompareRow row;
    row.run = d;
    const fs::path dir(d);
    std::vector<std::string> problems;
    try {
      row.model = backbone_kind_name(load_config((dir / "resolved.cfg").string()).model.kind);
    } catch (const std::exception&) {
      row.model = fs::path(d).filename().string();
      problems.push_back("missing resolved.cfg");
    }
    try {
      std::istringstream in(read_text((dir / "rewards.csv").string()));
      std::string line, last;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        if (!line.empty()) last = line;
      }
      if (last.empty()) throw std::runtime_error("empty");
      std::istringstream fields(last);
      std::string episode, reward;
      std::getline(fields, episode, ',');
      std::getline(fields, reward, ',');
      row.final_reward = std::stod(reward);
    } catch (const std::exception&) {
      problems.push_back("missing rewards.csv");
    }
    try {
      row.metrics = parse_metrics_kv(read_text((dir / "metrics.txt").string()));
    } catch (const std::exception&) {
      problems.push_back("missing metrics.txt");
    }
    for (std::size_t i = 0; i < problems.size(); ++i) row.problem += (i ? "; " : "") + problems[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string pct(const std::optional<MetricsReport>& m, double MetricsReport::*field) {
  if (!m) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * (*m).*field;
  return os.str();
}

std::string sharpe(const std::optional<MetricsReport>& m) {
  if (!m) return "-";
  if (!m->sharpe_ratio) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *m->sharpe_ratio;
  return os.str();
}

std::string reward(const std::optional<double>& r) {
  if (!r) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << *r;
  return os.str();
}

}  // namespace

std::string format_compare_table(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "Model" << std::right << std::setw(14) << "Final Reward" << std::setw(10)
     << "CR(%)" << std::setw(10) << "AR(%)" << std::setw(10) << "AV(%)" << std::setw(8) << "SR" << std::setw(10)
     << "MDD(%)" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(14) << r.model << std::right << std::setw(14) << reward(r.final_reward)
       << std::setw(10) << pct(r.metrics, &MetricsReport::cumulative_return) << std::setw(10)
       << pct(r.metrics, &MetricsReport::annualized_return) << std::setw(10)
       << pct(r.metrics, &MetricsReport::annualized_volatility) << std::setw(8) << sharpe(r.metrics)
       << std::setw(10) << pct(r.metrics, &MetricsReport::max_drawdown);
    if (!r.complete()) os << "  INCOMPLETE (" << r.problem << ")";
    os << '\n';
  }
  return os.str();
}

std::string format_compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "model,final_reward,cr,ar,av,sr,mdd,status\n" << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.model << ',';
    if (r.final_reward) os << *r.final_reward;
    os << ',';
    if (r.metrics) {
      os << r.metrics->cumulative_return << ',' << r.metrics->annualized_return << ','
         << r.metrics->annualized_volatility << ',';
      if (r.metrics->sharpe_ratio) {
        os << *r.metrics->sharpe_ratio;
      } else {
        os << "undefined";
      }
      os << ',' << r.metrics->max_drawdown;
    } else {
      os << ",,,,";
    }
    os << ',' << (r.complete() ? "complete" : "incomplete: " + r.problem) << '\n';
  }
  return os.str();
}

}  // namespace qsector
