#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qsector/pipeline.hpp"
#include "qsector/qsim.hpp"

namespace py = pybind11;
using namespace qsector;

namespace {

py::dict metrics_dict(const MetricsReport& m) {
  py::dict d;
  d["cumulative_return"] = m.cumulative_return;
  d["annualized_return"] = m.annualized_return;
  d["annualized_volatility"] = m.annualized_volatility;
  d["sharpe_ratio"] = m.sharpe_ratio ? py::cast(*m.sharpe_ratio) : py::none();
  d["max_drawdown"] = m.max_drawdown;
  d["n_days"] = m.n_days;
  return d;
}

py::dict panel_dict(const SectorPanel& p) {
  py::dict d;
  d["dates"] = p.dates;
  d["sector_ids"] = p.sector_ids;
  d["close"] = p.close;  // [S, T]
  d["cap_share"] = p.cap_share;
  return d;
}

ExperimentConfig config_with_out(const std::string& text, const std::string& out) {
  ExperimentConfig cfg = parse_config(text);
  if (!out.empty()) cfg.out = out;
  cfg.validate();
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Sector-rotation PPO agents with classical and simulated quantum backbones";

  // Other invalid_argument subclasses map to ValueError by default.
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DataError>(m, "DataError", PyExc_RuntimeError);

  m.def(
      "qnn_forward",
      [](const std::vector<double>& x, const std::vector<double>& theta, std::size_t n_layers) {
        return qsim::qnn_forward({x.size(), n_layers}, x, theta);
      },
      py::arg("x"), py::arg("theta"), py::arg("n_layers") = 2, "<Z_i> of the angle-embedded variational circuit");
  m.def(
      "qnn_param_shift",
      [](const std::vector<double>& x, const std::vector<double>& theta, const std::vector<double>& cotangent,
         std::size_t n_layers) {
        auto g = qsim::param_shift_grad({x.size(), n_layers}, x, theta, cotangent);
        return py::make_tuple(g.d_inputs, g.d_theta);
      },
      py::arg("x"), py::arg("theta"), py::arg("cotangent"), py::arg("n_layers") = 2,
      "(d_inputs, d_theta) of sum_k cotangent[k] * <Z_k>");

  m.def(
      "synth_panel",
      [](std::size_t sectors, std::size_t days, std::uint64_t seed, const std::string& regime) {
        return panel_dict(synth_panel({sectors, days, seed, parse_regime(regime)}));
      },
      py::arg("sectors") = 3, py::arg("days") = 200, py::arg("seed") = 0, py::arg("regime") = "gbm");
  m.def(
      "load_panel", [](const std::string& path) { return panel_dict(load_panel(path).panel); }, py::arg("path"));
  m.def(
      "build_features",
      [](std::size_t sectors, std::size_t days, std::uint64_t seed, const std::string& regime) {
        auto f = build_features(synth_panel({sectors, days, seed, parse_regime(regime)}));
        py::dict d;
        d["values"] = f.values;
        d["valid_from"] = f.valid_from;
        d["names"] = f.feature_names;
        return d;
      },
      py::arg("sectors") = 3, py::arg("days") = 200, py::arg("seed") = 0, py::arg("regime") = "gbm",
      "features of a synthetic panel, [T, 6 * S]");

  m.def(
      "compute_gae",
      [](const std::vector<double>& rewards, const std::vector<double>& values, double gamma, double lambda) {
        auto g = compute_gae(rewards, values, gamma, lambda);
        return py::make_tuple(g.advantages, g.returns);
      },
      py::arg("rewards"), py::arg("values"), py::arg("gamma") = 0.99, py::arg("lam") = 0.95);
  m.def("clipped_surrogate", &clipped_surrogate, py::arg("ratio"), py::arg("advantage"), py::arg("clip_eps") = 0.2);

  m.def(
      "compute_metrics", [](const std::vector<double>& values) { return metrics_dict(compute_metrics(values)); },
      py::arg("values"));
  m.def(
      "max_drawdown", [](const std::vector<double>& values) { return max_drawdown(values); }, py::arg("values"));

  m.def(
      "resolve_config", [](const std::string& text) { return format_config(config_with_out(text, "")); },
      py::arg("text"), "parse, validate and print every effective setting");
  m.def(
      "train",
      [](const std::string& config_text, const std::string& out) {
        auto cfg = config_with_out(config_text, out);
        TrainOutputs r;
        {
          py::gil_scoped_release release;
          r = run_train(cfg);
        }
        py::dict d;
        d["checkpoint"] = r.checkpoint_path;
        d["rewards"] = r.rewards_path;
        d["config"] = r.config_path;
        std::vector<double> totals;
        for (const auto& e : r.curve) totals.push_back(e.total_reward);
        d["episode_rewards"] = totals;
        return d;
      },
      py::arg("config_text"), py::arg("out") = "");
  m.def(
      "backtest",
      [](const std::string& config_text, const std::string& checkpoint, const std::string& out) {
        auto cfg = config_with_out(config_text, out);
        BacktestOutputs r;
        {
          py::gil_scoped_release release;
          r = run_backtest_command(cfg, checkpoint);
        }
        py::dict d = metrics_dict(r.metrics);
        d["equity"] = r.curve.values;
        d["dates"] = r.curve.dates;
        return d;
      },
      py::arg("config_text"), py::arg("checkpoint"), py::arg("out") = "");
  m.def(
      "compare", [](const std::vector<std::string>& runs) { return format_compare_table(compare_runs(runs)); },
      py::arg("runs"));
}
