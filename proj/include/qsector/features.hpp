#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "qsector/data.hpp"

namespace qsector {

// Rolling indicators over one price series. Positions before the first full
// window hold NaN.
std::vector<double> sma(const std::vector<double>& prices, std::size_t k);
// P_t - P_{t-k}
std::vector<double> momentum(const std::vector<double>& prices, std::size_t k);
// Sample standard deviation (divisor k - 1) of the last k log returns.
std::vector<double> volatility(const std::vector<double>& prices, std::size_t k);

struct FeatureConfig {
  std::vector<std::size_t> sma_windows{10, 20, 50};
  std::vector<std::size_t> momentum_lags{5, 10};
  std::size_t volatility_window = 20;
  // Z-score statistics are estimated on rows [valid_from, norm_end]. When
  // norm_end is npos every row from valid_from on is used.
  std::size_t norm_end = std::numeric_limits<std::size_t>::max();
  bool zscore = true;

  std::size_t per_sector() const { return sma_windows.size() + momentum_lags.size() + 1; }
  // First row at which every window is full.
  std::size_t valid_from() const;
};

/// T x d feature matrix, sector-major: columns [s*F, (s+1)*F) belong to sector s.
struct FeatureTensor {
  Eigen::MatrixXd values;
  std::vector<std::string> feature_names;
  std::size_t valid_from = 0;

  std::size_t n_rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(values.cols()); }
};

// Per sector: SMA ratios P/SMA_k - 1, fractional momentum (P_t - P_{t-k}) / P_{t-k},
// raw volatility; then per-column z-scoring with training-range statistics.
FeatureTensor build_features(const SectorPanel& panel, const FeatureConfig& config = {});

std::string format_features(const FeatureTensor& features, const std::vector<std::string>& dates);

}  // namespace qsector
