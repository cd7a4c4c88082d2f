#include "qsector/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace qsector {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& field, const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw ConfigError(field + ": '" + text + "' is not a valid number");
  }
  return value;
}

bool parse_bool(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(field + ": '" + text + "' is not a boolean (true or false)");
}

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename T>
Field size_field(std::string section, std::string key, T ExperimentConfig::*owner, std::size_t T::*member) {
  const std::string name = section + "." + key;
  return {section, key, [=](const ExperimentConfig& c) { return std::to_string(c.*owner.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*owner.*member = parse_number<std::size_t>(name, v); }};
}

template <typename T>
Field real_field(std::string section, std::string key, T ExperimentConfig::*owner, double T::*member) {
  const std::string name = section + "." + key;
  return {section, key, [=](const ExperimentConfig& c) { return fmt_double(c.*owner.*member); },
          [=](ExperimentConfig& c, const std::string& v) { c.*owner.*member = parse_number<double>(name, v); }};
}

Field string_field(std::string section, std::string key, std::string ExperimentConfig::*member) {
  return {section, key, [=](const ExperimentConfig& c) { return c.*member; },
          [=](ExperimentConfig& c, const std::string& v) { c.*member = v; }};
}

Field date_field(std::string key, std::string SplitSpec::*member) {
  return {"split", key, [=](const ExperimentConfig& c) { return c.split_dates.*member; },
          [=](ExperimentConfig& c, const std::string& v) {
            if (!v.empty() && !is_iso_date(v)) throw ConfigError("split." + key + ": '" + v + "' is not a YYYY-MM-DD date");
            c.split_dates.*member = v;
          }};
}

template <typename E>
E wrap_enum(const std::string& field, const std::function<E(const std::string&)>& parse, const std::string& v) {
  try {
    return parse(v);
  } catch (const std::exception& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"data", "source", [](const C& c) { return c.data_source; },
                 [](C& c, const std::string& v) {
                   if (v != "file" && v != "synth") throw ConfigError("data.source: expected file or synth, got '" + v + "'");
                   c.data_source = v;
                 }});
    f.push_back(string_field("data", "path", &C::data_path));
    f.push_back(size_field("data", "synth_sectors", &C::synth, &SynthSpec::sectors));
    f.push_back(size_field("data", "synth_days", &C::synth, &SynthSpec::days));
    f.push_back({"data", "synth_seed", [](const C& c) { return std::to_string(c.synth.seed); },
                 [](C& c, const std::string& v) { c.synth.seed = parse_number<std::uint64_t>("data.synth_seed", v); }});
    f.push_back({"data", "synth_regime", [](const C& c) { return regime_name(c.synth.regime); },
                 [](C& c, const std::string& v) {
                   c.synth.regime = wrap_enum<Regime>("data.synth_regime", parse_regime, v);
                 }});

    f.push_back(date_field("train_start", &SplitSpec::train_start));
    f.push_back(date_field("train_end", &SplitSpec::train_end));
    f.push_back(date_field("test_start", &SplitSpec::test_start));
    f.push_back(date_field("test_end", &SplitSpec::test_end));
    f.push_back({"split", "train_fraction", [](const C& c) { return fmt_double(c.train_fraction); },
                 [](C& c, const std::string& v) { c.train_fraction = parse_number<double>("split.train_fraction", v); }});

    f.push_back(size_field("env", "seq_len", &C::env, &EnvConfig::seq_len));
    f.push_back(size_field("env", "top_n", &C::env, &EnvConfig::top_n));
    f.push_back({"env", "rank_by", [](const C& c) { return rank_by_name(c.env.rank_by); },
                 [](C& c, const std::string& v) { c.env.rank_by = wrap_enum<RankBy>("env.rank_by", parse_rank_by, v); }});

    f.push_back({"model", "kind", [](const C& c) { return backbone_kind_name(c.model.kind); },
                 [](C& c, const std::string& v) {
                   c.model.kind = wrap_enum<BackboneKind>("model.kind", parse_backbone_kind, v);
                 }});
    f.push_back({"model", "critic_kind",
                 [](const C& c) { return c.critic_kind ? backbone_kind_name(*c.critic_kind) : std::string("same"); },
                 [](C& c, const std::string& v) {
                   if (v.empty() || v == "same") {
                     c.critic_kind.reset();
                   } else {
                     c.critic_kind = wrap_enum<BackboneKind>("model.critic_kind", parse_backbone_kind, v);
                   }
                 }});
    f.push_back(size_field("model", "hidden", &C::model, &BackboneConfig::hidden));
    f.push_back({"model", "layers",
                 [](const C& c) { return c.model.layers == 0 ? std::string("auto") : std::to_string(c.model.layers); },
                 [](C& c, const std::string& v) {
                   c.model.layers = v == "auto" ? 0 : parse_number<std::size_t>("model.layers", v);
                   if (v != "auto" && c.model.layers == 0) throw ConfigError("model.layers: must be positive or auto");
                 }});
    f.push_back(size_field("model", "heads", &C::model, &BackboneConfig::heads));
    f.push_back(real_field("model", "dropout", &C::model, &BackboneConfig::dropout));
    f.push_back(size_field("model", "n_qubits", &C::model, &BackboneConfig::n_qubits));
    f.push_back(size_field("model", "q_layers", &C::model, &BackboneConfig::q_layers));

    f.push_back(real_field("ppo", "gamma", &C::ppo, &PpoConfig::gamma));
    f.push_back(real_field("ppo", "clip_eps", &C::ppo, &PpoConfig::clip_eps));
    f.push_back(real_field("ppo", "entropy_beta", &C::ppo, &PpoConfig::entropy_beta));
    f.push_back(size_field("ppo", "batch_size", &C::ppo, &PpoConfig::batch_size));
    f.push_back(size_field("ppo", "ppo_epochs", &C::ppo, &PpoConfig::ppo_epochs));
    f.push_back(real_field("ppo", "lr_actor", &C::ppo, &PpoConfig::lr_actor));
    f.push_back(real_field("ppo", "lr_critic", &C::ppo, &PpoConfig::lr_critic));
    f.push_back(real_field("ppo", "gae_lambda", &C::ppo, &PpoConfig::gae_lambda));
    f.push_back(size_field("ppo", "epochs", &C::ppo, &PpoConfig::epochs));
    f.push_back({"ppo", "normalize_advantages", [](const C& c) { return std::string(c.ppo.normalize_advantages ? "true" : "false"); },
                 [](C& c, const std::string& v) { c.ppo.normalize_advantages = parse_bool("ppo.normalize_advantages", v); }});
    f.push_back(real_field("ppo", "max_grad_norm", &C::ppo, &PpoConfig::max_grad_norm));

    f.push_back({"backtest", "cost_rate", [](const C& c) { return fmt_double(c.cost_rate); },
                 [](C& c, const std::string& v) { c.cost_rate = parse_number<double>("backtest.cost_rate", v); }});

    f.push_back({"run", "seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); }});
    f.push_back(string_field("run", "out", &C::out));
    return f;
  }();
  return table;
}

const Field* find_field(const std::string& section, const std::string& key) {
  for (const auto& f : fields()) {
    if (f.section == section && f.key == key) return &f;
  }
  return nullptr;
}

}  // namespace

ExperimentConfig::ExperimentConfig() { model.layers = 0; }

BackboneConfig ExperimentConfig::actor_backbone() const {
  BackboneConfig b = model;
  if (b.layers == 0) b.layers = BackboneConfig::defaults(b.kind).layers;
  return b;
}

BackboneConfig ExperimentConfig::critic_backbone() const {
  BackboneConfig b = model;
  b.kind = critic_kind.value_or(model.kind);
  if (b.layers == 0) b.layers = BackboneConfig::defaults(b.kind).layers;
  return b;
}

bool ExperimentConfig::has_split_dates() const {
  return !split_dates.train_start.empty() || !split_dates.train_end.empty() || !split_dates.test_start.empty() ||
         !split_dates.test_end.empty();
}

void ExperimentConfig::validate() const {
  if (data_source == "file" && data_path.empty()) {
    throw ConfigError("data.path: missing (set it in [data] or pass --data, or use data.source = synth)");
  }
  if (has_split_dates()) {
    const auto& s = split_dates;
    if (s.train_start.empty() || s.train_end.empty() || s.test_start.empty() || s.test_end.empty()) {
      throw ConfigError("split: either all four dates or none must be given");
    }
    if (!(s.train_end < s.test_start)) throw ConfigError("split: train_end must precede test_start");
  } else if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split.train_fraction: must lie in (0, 1)");
  }
  if (env.seq_len == 0) throw ConfigError("env.seq_len: must be positive");
  if (env.top_n == 0) throw ConfigError("env.top_n: must be positive");
  if (data_source == "synth" && env.top_n > synth.sectors) {
    throw ConfigError("env.top_n: exceeds data.synth_sectors");
  }
  if (cost_rate < 0.0) throw ConfigError("backtest.cost_rate: must be non-negative");
  try {
    actor_backbone().validate();
    critic_backbone().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
  try {
    ppo.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("ppo: ") + e.what());
  }
  if (ppo.epochs == 0) throw ConfigError("ppo.epochs: must be positive");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "malformed section header '" + line + "'");
      section = trim(line.substr(1, line.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == section;
      if (!known) throw ConfigError(where + "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
    if (section.empty()) throw ConfigError(where + "key outside any [section]");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* f = find_field(section, key);
    if (f == nullptr) throw ConfigError(where + "unknown key '" + key + "' in section [" + section + "]");
    try {
      f->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      if (!section.empty()) os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

std::vector<std::string> apply_overrides(ExperimentConfig& config, const Overrides& o) {
  std::vector<std::string> log;
  auto set = [&](const std::string& section, const std::string& key, const std::string& value, const char* flag) {
    const Field* f = find_field(section, key);
    const std::string before = f->get(config);
    f->set(config, value);
    const std::string after = f->get(config);
    if (before != after) {
      log.push_back(section + "." + key + " = " + after + " (from " + flag + ", config had '" + before + "')");
    }
  };
  if (o.model) set("model", "kind", *o.model, "--model");
  if (o.seed) set("run", "seed", std::to_string(*o.seed), "--seed");
  if (o.data) {
    set("data", "source", "file", "--data");
    set("data", "path", *o.data, "--data");
  }
  if (o.out) set("run", "out", *o.out, "--out");
  if (o.top_n) set("env", "top_n", std::to_string(*o.top_n), "--top-n");
  if (o.epochs) set("ppo", "epochs", std::to_string(*o.epochs), "--epochs");
  return log;
}

}  // namespace qsector
