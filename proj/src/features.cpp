#include "qsector/features.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace qsector {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

}  // namespace

std::vector<double> sma(const std::vector<double>& prices, std::size_t k) {
  if (k == 0) throw std::invalid_argument("sma window must be >= 1");
  std::vector<double> out(prices.size(), kNaN);
  for (std::size_t t = k - 1; t < prices.size(); ++t) {
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) s += prices[t - i];
    out[t] = s / static_cast<double>(k);
  }
  return out;
}

std::vector<double> momentum(const std::vector<double>& prices, std::size_t k) {
  if (k == 0) throw std::invalid_argument("momentum lag must be >= 1");
  std::vector<double> out(prices.size(), kNaN);
  for (std::size_t t = k; t < prices.size(); ++t) out[t] = prices[t] - prices[t - k];
  return out;
}

std::vector<double> volatility(const std::vector<double>& prices, std::size_t k) {
  if (k < 2) throw std::invalid_argument("volatility window must be >= 2");
  for (double p : prices) {
    if (!(p > 0.0)) throw std::domain_error("volatility requires strictly positive prices");
  }
  std::vector<double> ret(prices.size(), kNaN);
  for (std::size_t t = 1; t < prices.size(); ++t) ret[t] = std::log(prices[t] / prices[t - 1]);
  std::vector<double> out(prices.size(), kNaN);
  for (std::size_t t = k; t < prices.size(); ++t) {
    double mean = 0.0;
    for (std::size_t i = 0; i < k; ++i) mean += ret[t - i];
    mean /= static_cast<double>(k);
    double ss = 0.0;
    for (std::size_t i = 0; i < k; ++i) ss += (ret[t - i] - mean) * (ret[t - i] - mean);
    out[t] = std::sqrt(ss / static_cast<double>(k - 1));
  }
  return out;
}

std::size_t FeatureConfig::valid_from() const {
  std::size_t v = volatility_window;
  for (auto k : sma_windows) v = std::max(v, k - 1);
  for (auto k : momentum_lags) v = std::max(v, k);
  return v;
}

FeatureTensor build_features(const SectorPanel& panel, const FeatureConfig& config) {
  const std::size_t n_s = panel.n_sectors(), n_t = panel.n_days(), f = config.per_sector();
  FeatureTensor out;
  out.valid_from = config.valid_from();
  out.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n_t), static_cast<Eigen::Index>(n_s * f), kNaN);

  for (std::size_t s = 0; s < n_s; ++s) {
    std::vector<double> p(n_t);
    for (std::size_t t = 0; t < n_t; ++t) p[t] = panel.close(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t));
    std::size_t col = s * f;
    auto put = [&](const std::vector<double>& series, const std::string& name) {
      for (std::size_t t = 0; t < n_t; ++t) out.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(col)) = series[t];
      out.feature_names.push_back(panel.sector_ids[s] + ":" + name);
      ++col;
    };
    for (auto k : config.sma_windows) {
      auto m = sma(p, k);
      for (std::size_t t = 0; t < n_t; ++t) m[t] = p[t] / m[t] - 1.0;
      put(m, "sma" + std::to_string(k));
    }
    for (auto k : config.momentum_lags) {
      auto m = momentum(p, k);
      for (std::size_t t = k; t < n_t; ++t) m[t] /= p[t - k];
      put(m, "mom" + std::to_string(k));
    }
    put(volatility(p, config.volatility_window), "vol" + std::to_string(config.volatility_window));
  }

  if (config.zscore && out.valid_from < n_t) {
    const std::size_t last = std::min(config.norm_end, n_t - 1);
    if (last < out.valid_from) {
      throw std::invalid_argument("normalization range ends before the first valid feature row");
    }
    const auto begin = static_cast<Eigen::Index>(out.valid_from);
    const auto count = static_cast<Eigen::Index>(last - out.valid_from + 1);
    for (Eigen::Index c = 0; c < out.values.cols(); ++c) {
      const auto seg = out.values.col(c).segment(begin, count);
      const double mu = seg.mean();
      const double sd = std::sqrt((seg.array() - mu).square().mean());
      for (Eigen::Index t = begin; t < out.values.rows(); ++t) {
        const double centred = out.values(t, c) - mu;
        // Constant columns carry no signal; leave them at zero.
        out.values(t, c) = sd > 1e-12 ? centred / sd : 0.0;
      }
    }
  }
  return out;
}

std::string format_features(const FeatureTensor& features, const std::vector<std::string>& dates) {
  std::ostringstream os;
  os << "date";
  for (const auto& n : features.feature_names) os << ',' << n;
  os << '\n' << std::setprecision(17);
  for (std::size_t t = features.valid_from; t < features.n_rows(); ++t) {
    os << dates.at(t);
    for (Eigen::Index c = 0; c < features.values.cols(); ++c) os << ',' << features.values(static_cast<Eigen::Index>(t), c);
    os << '\n';
  }
  return os.str();
}

}  // namespace qsector
