#include "qsector/data.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "qsector/rng.hpp"

namespace qsector {
namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const char* what, std::size_t line) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || s.empty()) {
    throw ParseError(std::string("cannot parse ") + what + " '" + s + "'", line);
  }
  return v;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> business_days(std::size_t count) {
  using namespace std::chrono;
  std::vector<std::string> out;
  out.reserve(count);
  sys_days day = sys_days{year{2007} / April / 23};
  while (out.size() < count) {
    const weekday wd{day};
    if (wd != Saturday && wd != Sunday) {
      const year_month_day ymd{day};
      char buf[16];
      std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                    static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
      out.emplace_back(buf);
    }
    day += days{1};
  }
  return out;
}

// Ranking of sectors by descending key, ties to the lower index.
std::vector<std::size_t> rank_desc(const std::vector<double>& key) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return key[a] > key[b]; });
  return idx;
}

double momentum_key(const Eigen::MatrixXd& close, std::size_t s, std::size_t t) {
  return close(s, t) / close(s, t - kLeaderLookback) - 1.0;
}

}  // namespace

bool is_iso_date(const std::string& s) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  for (std::size_t i : {0, 1, 2, 3, 5, 6, 8, 9}) {
    if (s[i] < '0' || s[i] > '9') return false;
  }
  const int month = std::stoi(s.substr(5, 2));
  const int day = std::stoi(s.substr(8, 2));
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

void SectorPanel::validate() const {
  const auto s = static_cast<Eigen::Index>(sector_ids.size());
  const auto t = static_cast<Eigen::Index>(dates.size());
  if (close.rows() != s || close.cols() != t || cap_share.rows() != s || cap_share.cols() != t) {
    throw ValidationError("panel matrices are not S x T");
  }
  for (std::size_t i = 0; i < dates.size(); ++i) {
    if (!is_iso_date(dates[i])) throw ValidationError("invalid date '" + dates[i] + "'");
    if (i > 0 && !(dates[i - 1] < dates[i])) throw ValidationError("dates not strictly increasing at " + dates[i]);
  }
  for (Eigen::Index j = 0; j < t; ++j) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < s; ++i) {
      if (!(close(i, j) > 0.0) || !std::isfinite(close(i, j))) {
        throw ValidationError("non-positive price for sector " + sector_ids[static_cast<std::size_t>(i)] + " on " +
                              dates[static_cast<std::size_t>(j)]);
      }
      const double w = cap_share(i, j);
      if (!(w >= 0.0 && w <= 1.0)) {
        throw ValidationError("cap_share outside [0, 1] for sector " + sector_ids[static_cast<std::size_t>(i)] +
                              " on " + dates[static_cast<std::size_t>(j)]);
      }
      sum += w;
    }
    if (sum > 1.0 + kShareSumTolerance) {
      throw ValidationError("cap_share column sum " + format_double(sum) + " exceeds 1 on " +
                            dates[static_cast<std::size_t>(j)]);
    }
  }
}

std::string LoadReport::to_text() const {
  std::ostringstream os;
  os << "load_report rows_read=" << rows_read << " dates_dropped=" << dates_dropped << '\n';
  for (const auto& [sector, n] : forward_filled) {
    if (n > 0) os << "load_report forward_filled sector=" << sector << " days=" << n << '\n';
  }
  return os.str();
}

LoadResult parse_panel(const std::string& text, const ColumnMap& schema) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    header = split_row(line);
    break;
  }
  if (header.empty()) throw ParseError("missing header row", lineno == 0 ? 1 : lineno);
  if (header[0].size() >= 3 && header[0].compare(0, 3, "\xEF\xBB\xBF") == 0) header[0].erase(0, 3);

  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError("header lacks column '" + name + "'", lineno);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_date = column(schema.date), c_sector = column(schema.sector), c_close = column(schema.close),
                    c_share = column(schema.cap_share);

  struct Obs {
    double close, share;
  };
  std::vector<std::string> sectors;
  std::unordered_map<std::string, std::size_t> sector_index;
  std::vector<std::map<std::string, Obs>> series;
  LoadResult result;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_row(line);
    if (cells.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()),
                       lineno);
    }
    const std::string& date = cells[c_date];
    if (!is_iso_date(date)) throw ParseError("invalid ISO-8601 date '" + date + "'", lineno);
    const std::string& sector = cells[c_sector];
    if (sector.empty()) throw ParseError("empty sector_id", lineno);
    const double close = parse_number(cells[c_close], "close", lineno);
    const double share = parse_number(cells[c_share], "cap_share", lineno);
    if (!(close > 0.0) || !std::isfinite(close)) {
      throw ValidationError("line " + std::to_string(lineno) + ": non-positive price " + cells[c_close]);
    }
    if (!(share >= 0.0 && share <= 1.0)) {
      throw ValidationError("line " + std::to_string(lineno) + ": cap_share " + cells[c_share] + " outside [0, 1]");
    }
    auto [it, inserted] = sector_index.try_emplace(sector, sectors.size());
    if (inserted) {
      sectors.push_back(sector);
      series.emplace_back();
    }
    if (!series[it->second].emplace(date, Obs{close, share}).second) {
      throw DuplicateKeyError("line " + std::to_string(lineno) + ": duplicate row for date " + date + ", sector " +
                              sector);
    }
    ++result.report.rows_read;
  }
  if (sectors.empty()) throw InsufficientHistoryError("panel has no data rows");

  std::string lo = series[0].begin()->first, hi = series[0].rbegin()->first;
  std::map<std::string, bool> all_dates;
  for (const auto& s : series) {
    lo = std::max(lo, s.begin()->first);
    hi = std::min(hi, s.rbegin()->first);
    for (const auto& [d, _] : s) all_dates[d] = true;
  }
  std::vector<std::string> dates;
  for (const auto& [d, _] : all_dates) {
    if (d >= lo && d <= hi) {
      dates.push_back(d);
    } else {
      ++result.report.dates_dropped;
    }
  }
  if (dates.size() < kMinHistory) {
    throw InsufficientHistoryError("panel has " + std::to_string(dates.size()) + " common dates; at least " +
                                   std::to_string(kMinHistory) + " are required");
  }

  SectorPanel& panel = result.panel;
  panel.dates = dates;
  panel.sector_ids = sectors;
  panel.close.resize(static_cast<Eigen::Index>(sectors.size()), static_cast<Eigen::Index>(dates.size()));
  panel.cap_share.resizeLike(panel.close);
  for (std::size_t s = 0; s < sectors.size(); ++s) {
    std::size_t filled = 0;
    for (std::size_t t = 0; t < dates.size(); ++t) {
      auto it = series[s].upper_bound(dates[t]);
      // Latest observation on or before this date; exists because the range
      // starts at or after each sector's first date.
      --it;
      if (it->first != dates[t]) ++filled;
      panel.close(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = it->second.close;
      panel.cap_share(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(t)) = it->second.share;
    }
    result.report.forward_filled[sectors[s]] = filled;
  }
  panel.validate();
  return result;
}

LoadResult load_panel(const std::string& path, const ColumnMap& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open panel file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_panel(buf.str(), schema);
}

std::string format_panel(const SectorPanel& panel) {
  std::ostringstream os;
  os << "date,sector_id,close,cap_share\n";
  for (std::size_t t = 0; t < panel.n_days(); ++t) {
    for (std::size_t s = 0; s < panel.n_sectors(); ++s) {
      const auto si = static_cast<Eigen::Index>(s), ti = static_cast<Eigen::Index>(t);
      os << panel.dates[t] << ',' << panel.sector_ids[s] << ',' << format_double(panel.close(si, ti)) << ','
         << format_double(panel.cap_share(si, ti)) << '\n';
    }
  }
  return os.str();
}

void write_panel(const SectorPanel& panel, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write panel file '" + path + "'");
  out << format_panel(panel);
}

Regime parse_regime(const std::string& name) {
  if (name == "gbm") return Regime::Gbm;
  if (name == "deterministic-leader") return Regime::DeterministicLeader;
  throw ValidationError("unknown synthetic regime '" + name + "' (expected gbm or deterministic-leader)");
}

std::string regime_name(Regime regime) {
  return regime == Regime::Gbm ? "gbm" : "deterministic-leader";
}

std::size_t leader_rule(const SectorPanel& panel, std::size_t t) {
  if (t < kLeaderLookback) return 0;
  std::vector<double> key(panel.n_sectors());
  for (std::size_t s = 0; s < key.size(); ++s) key[s] = momentum_key(panel.close, s, t);
  return rank_desc(key).front();
}

SectorPanel synth_panel(const SynthSpec& spec) {
  if (spec.sectors < 2) throw ValidationError("synthetic panel needs at least 2 sectors");
  if (spec.days < kMinHistory) {
    throw ValidationError("synthetic panel needs at least " + std::to_string(kMinHistory) + " days");
  }
  const std::size_t n_s = spec.sectors, n_t = spec.days;
  const auto S = static_cast<Eigen::Index>(n_s), T = static_cast<Eigen::Index>(n_t);
  SectorPanel panel;
  panel.dates = business_days(n_t);
  for (std::size_t s = 0; s < n_s; ++s) {
    std::ostringstream id;
    id << 'S' << std::setw(2) << std::setfill('0') << s;
    panel.sector_ids.push_back(id.str());
  }
  panel.close.resize(S, T);
  panel.cap_share.resize(S, T);

  auto prices = make_rng(spec.seed, "synth.prices");
  std::normal_distribution<double> noise(0.0, 1.0);

  if (spec.regime == Regime::Gbm) {
    auto shares = make_rng(spec.seed, "synth.shares");
    std::normal_distribution<double> drift_draw(3e-4, 2e-4);
    for (Eigen::Index s = 0; s < S; ++s) {
      const double drift = drift_draw(prices);
      double log_p = std::log(100.0) + 0.1 * noise(prices);
      for (Eigen::Index t = 0; t < T; ++t) {
        if (t > 0) log_p += drift + 0.015 * noise(prices);
        panel.close(s, t) = std::exp(log_p);
      }
    }
    // Dirichlet chain: w_t ~ Dir(kappa * w_{t-1} + floor).
    const double kappa = 2000.0, floor = 0.01;
    auto dirichlet = [&](const std::vector<double>& alpha) {
      std::vector<double> g(alpha.size());
      double total = 0.0;
      for (std::size_t i = 0; i < alpha.size(); ++i) {
        std::gamma_distribution<double> gd(alpha[i], 1.0);
        g[i] = gd(shares);
        total += g[i];
      }
      for (auto& x : g) x /= total;
      return g;
    };
    std::vector<double> w = dirichlet(std::vector<double>(n_s, 2.0));
    for (Eigen::Index t = 0; t < T; ++t) {
      if (t > 0) {
        std::vector<double> alpha(n_s);
        for (std::size_t i = 0; i < n_s; ++i) alpha[i] = kappa * w[i] + floor;
        w = dirichlet(alpha);
      }
      for (Eigen::Index s = 0; s < S; ++s) panel.cap_share(s, t) = w[static_cast<std::size_t>(s)];
    }
  } else {
    std::uniform_int_distribution<std::size_t> block_len(20, 40);
    std::uniform_int_distribution<std::size_t> pick(0, n_s - 2);
    std::size_t hot = n_s;  // none yet
    std::size_t remaining = 0;
    std::vector<double> log_p(n_s, std::log(100.0));
    for (Eigen::Index t = 0; t < T; ++t) {
      if (remaining == 0) {
        if (hot == n_s) {
          hot = std::uniform_int_distribution<std::size_t>(0, n_s - 1)(prices);
        } else {
          const std::size_t next = pick(prices);
          hot = next >= hot ? next + 1 : next;
        }
        remaining = block_len(prices);
      }
      --remaining;
      for (std::size_t s = 0; s < n_s; ++s) {
        if (t > 0) log_p[s] += (s == hot ? 0.012 : -0.001) + 0.004 * noise(prices);
        panel.close(static_cast<Eigen::Index>(s), t) = std::exp(log_p[s]);
      }
    }
    const double norm = static_cast<double>(n_s * (n_s + 1)) / 2.0;
    for (std::size_t day = 0; day < n_t; ++day) {
      std::vector<std::size_t> order(n_s);
      std::iota(order.begin(), order.end(), 0);
      if (day > kLeaderLookback) {
        std::vector<double> key(n_s);
        for (std::size_t s = 0; s < n_s; ++s) key[s] = momentum_key(panel.close, s, day - 1);
        order = rank_desc(key);
      }
      for (std::size_t r = 0; r < n_s; ++r) {
        panel.cap_share(static_cast<Eigen::Index>(order[r]), static_cast<Eigen::Index>(day)) =
            static_cast<double>(n_s - r) / norm;
      }
    }
  }
  panel.validate();
  return panel;
}

SplitIndices resolve_split(const SectorPanel& panel, const SplitSpec& split) {
  for (const auto* d : {&split.train_start, &split.train_end, &split.test_start, &split.test_end}) {
    if (!is_iso_date(*d)) throw ValidationError("split date '" + *d + "' is not ISO-8601");
  }
  if (!(split.train_end < split.test_start)) throw ValidationError("split requires train_end < test_start");
  const auto& dates = panel.dates;
  auto first_at_or_after = [&](const std::string& d) {
    return static_cast<std::size_t>(std::lower_bound(dates.begin(), dates.end(), d) - dates.begin());
  };
  auto last_at_or_before = [&](const std::string& d) -> std::ptrdiff_t {
    return (std::upper_bound(dates.begin(), dates.end(), d) - dates.begin()) - 1;
  };
  SplitIndices idx;
  const std::size_t a = first_at_or_after(split.train_start);
  const std::ptrdiff_t b = last_at_or_before(split.train_end);
  const std::size_t c = first_at_or_after(split.test_start);
  const std::ptrdiff_t d = last_at_or_before(split.test_end);
  if (b < 0 || a > static_cast<std::size_t>(b)) throw ValidationError("training range has no panel dates");
  if (d < 0 || c > static_cast<std::size_t>(d)) throw ValidationError("test range has no panel dates");
  idx.train_begin = a;
  idx.train_end = static_cast<std::size_t>(b);
  idx.test_begin = c;
  idx.test_end = static_cast<std::size_t>(d);
  return idx;
}

SplitIndices fraction_split(const SectorPanel& panel, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ValidationError("train_fraction must lie in (0, 1)");
  const std::size_t n = panel.n_days();
  const auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * train_fraction));
  if (n_train == 0 || n_train >= n) throw ValidationError("fractional split leaves an empty range");
  return {0, n_train - 1, n_train, n - 1};
}

}  // namespace qsector
