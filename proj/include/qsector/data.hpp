#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace qsector {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& msg, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  using DataError::DataError;
};

class DuplicateKeyError : public DataError {
 public:
  using DataError::DataError;
};

class InsufficientHistoryError : public DataError {
 public:
  using DataError::DataError;
};

// Longest indicator window plus the observation length.
inline constexpr std::size_t kMinHistory = 60;
inline constexpr double kShareSumTolerance = 1e-6;

/// Aligned daily sector series. close and cap_share are S x T.
struct SectorPanel {
  std::vector<std::string> dates;  // ISO-8601, strictly increasing
  std::vector<std::string> sector_ids;
  Eigen::MatrixXd close;
  Eigen::MatrixXd cap_share;

  std::size_t n_sectors() const { return sector_ids.size(); }
  std::size_t n_days() const { return dates.size(); }

  // Throws ValidationError on the first violated invariant.
  void validate() const;
};

struct ColumnMap {
  std::string date = "date";
  std::string sector = "sector_id";
  std::string close = "close";
  std::string cap_share = "cap_share";
};

struct LoadReport {
  std::size_t rows_read = 0;
  std::size_t dates_dropped = 0;                  // outside the common range
  std::map<std::string, std::size_t> forward_filled;  // per sector
  std::string to_text() const;
};

struct LoadResult {
  SectorPanel panel;
  LoadReport report;
};

LoadResult load_panel(const std::string& path, const ColumnMap& schema = {});
LoadResult parse_panel(const std::string& text, const ColumnMap& schema = {});

// Long format, one row per (date, sector), sorted by date then sector order.
std::string format_panel(const SectorPanel& panel);
void write_panel(const SectorPanel& panel, const std::string& path);

enum class Regime { Gbm, DeterministicLeader };

Regime parse_regime(const std::string& name);
std::string regime_name(Regime regime);

struct SynthSpec {
  std::size_t sectors = 3;
  std::size_t days = 200;
  std::uint64_t seed = 0;
  Regime regime = Regime::Gbm;
};

// Look-back of the momentum signal that drives the deterministic-leader regime.
inline constexpr std::size_t kLeaderLookback = 10;

/// Synthetic panel, deterministic in the seed.
///
/// gbm: geometric random-walk prices; cap shares follow a Dirichlet chain
/// centred on the previous day's shares.
///
/// deterministic-leader: the cap-share ranking on day t+1 is the ranking of
/// the 10-day fractional momentum close[t]/close[t-10] - 1 on day t (ties to
/// the lower sector index); before day 11 the ranking is by sector index.
/// Prices move in blocks of 20..40 days during which one sector trends up.
SectorPanel synth_panel(const SynthSpec& spec);

// The sector ranked first on day t+1 under the deterministic-leader rule,
// computed from prices up to day t.
std::size_t leader_rule(const SectorPanel& panel, std::size_t t);

struct SplitSpec {
  std::string train_start, train_end, test_start, test_end;
};

struct SplitIndices {
  std::size_t train_begin = 0, train_end = 0;  // inclusive
  std::size_t test_begin = 0, test_end = 0;    // inclusive
};

// Maps the date range onto panel indices. Bounds snap inward to the nearest
// panel dates; throws ValidationError if a range is empty or train_end >= test_start.
SplitIndices resolve_split(const SectorPanel& panel, const SplitSpec& split);
// Chronological split with the first `train_fraction` of the days for training.
SplitIndices fraction_split(const SectorPanel& panel, double train_fraction);

bool is_iso_date(const std::string& s);

}  // namespace qsector
