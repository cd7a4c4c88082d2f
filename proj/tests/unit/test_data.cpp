#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>

#include "qsector/data.hpp"
#include "qsector/env.hpp"

using namespace qsector;

namespace {

std::string date_at(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "2021-%02d-%02d", 1 + i / 28, 1 + i % 28);
  return buf;
}

// Two sectors over `days` dates; sector B skips the dates listed in `gaps`.
std::string panel_csv(int days, std::vector<int> gaps = {}, int b_start = 0) {
  std::ostringstream os;
  os << "date,sector_id,close,cap_share\n";
  for (int i = 0; i < days; ++i) {
    os << date_at(i) << ",A," << 100 + i << ",0.6\n";
    if (i >= b_start && std::find(gaps.begin(), gaps.end(), i) == gaps.end()) {
      os << date_at(i) << ",B," << 50 + i << ",0.4\n";
    }
  }
  return os.str();
}

template <class E>
std::string error_text(const std::string& csv) {
  try {
    parse_panel(csv);
  } catch (const E& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("well-formed panel parses into aligned matrices") {
  auto r = parse_panel(panel_csv(70));
  CHECK(r.panel.n_days() == 70);
  CHECK(r.panel.n_sectors() == 2);
  CHECK(r.panel.sector_ids[1] == "B");
  CHECK(r.panel.close(1, 3) == 53.0);
  CHECK(r.panel.cap_share(0, 69) == 0.6);
  CHECK(r.report.rows_read == 140);
  CHECK(r.report.dates_dropped == 0);
}

TEST_CASE("gaps are forward filled and uncovered dates dropped") {
  auto r = parse_panel(panel_csv(70, {10, 11}, 3));
  CHECK(r.panel.n_days() == 67);
  CHECK(r.panel.dates.front() == date_at(3));
  CHECK(r.report.dates_dropped == 3);
  CHECK(r.report.forward_filled.at("B") == 2);
  CHECK(r.report.forward_filled.at("A") == 0);
  // Days 10 and 11 carry day 9's close.
  CHECK(r.panel.close(1, 10 - 3) == 59.0);
  CHECK(r.panel.close(1, 11 - 3) == 59.0);
  CHECK(r.report.to_text().find("sector=B days=2") != std::string::npos);
}

TEST_CASE("malformed rows report their line numbers") {
  auto csv = panel_csv(70);
  std::string bad_date = csv;
  bad_date.insert(bad_date.find('\n') + 1, "2021-13-40,A,1,0.1\n");
  CHECK(error_text<ParseError>(bad_date).find("line 2:") == 0);

  std::string short_row = csv + "2021-12-01,A,1\n";
  CHECK(error_text<ParseError>(short_row).find("line 142:") == 0);

  std::string bad_num = csv + "2021-12-01,A,abc,0.1\n";
  CHECK(error_text<ParseError>(bad_num).find("close") != std::string::npos);

  CHECK(error_text<ParseError>("date,sector_id,close\n").find("cap_share") != std::string::npos);
  CHECK(!error_text<ValidationError>(csv + "2021-12-01,A,-3,0.1\n").empty());
  CHECK(!error_text<ValidationError>(csv + "2021-12-01,A,3,1.5\n").empty());
  CHECK(!error_text<DuplicateKeyError>(csv + date_at(0) + ",A,3,0.1\n").empty());
  CHECK(!error_text<InsufficientHistoryError>(panel_csv(30)).empty());
}

TEST_CASE("column sums above one are rejected") {
  std::string csv = panel_csv(70);
  auto pos = csv.find(",B,50,0.4");
  csv.replace(pos, 9, ",B,50,0.5");
  CHECK(!error_text<ValidationError>(csv).empty());
}

TEST_CASE("custom column names") {
  std::string csv = panel_csv(70);
  csv.replace(0, csv.find('\n'), "day,ticker,px,share");
  ColumnMap m{"day", "ticker", "px", "share"};
  CHECK(parse_panel(csv, m).panel.n_days() == 70);
}

TEST_CASE("format and parse round trip") {
  auto p = synth_panel({5, 90, 3, Regime::Gbm});
  auto back = parse_panel(format_panel(p)).panel;
  CHECK(back.dates == p.dates);
  CHECK(back.sector_ids == p.sector_ids);
  CHECK((back.close - p.close).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.cap_share - p.cap_share).cwiseAbs().maxCoeff() == 0.0);

  auto path = (std::filesystem::temp_directory_path() / "qsector_panel_test.csv").string();
  write_panel(p, path);
  CHECK(load_panel(path).panel.dates == p.dates);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_panel(path), DataError);
}

TEST_CASE("synthetic panels are deterministic and valid") {
  for (auto regime : {Regime::Gbm, Regime::DeterministicLeader}) {
    SynthSpec spec{6, 150, 42, regime};
    auto a = synth_panel(spec), b = synth_panel(spec);
    CHECK(a.close == b.close);
    CHECK(a.cap_share == b.cap_share);
    CHECK_NOTHROW(a.validate());
    spec.seed = 43;
    CHECK(synth_panel(spec).close != a.close);
  }
  CHECK(parse_regime("deterministic-leader") == Regime::DeterministicLeader);
  CHECK(regime_name(Regime::Gbm) == "gbm");
  CHECK_THROWS_AS(parse_regime("brownian"), ValidationError);
  CHECK_THROWS_AS(synth_panel({1, 100, 0, Regime::Gbm}), ValidationError);
}

TEST_CASE("deterministic leader: tomorrow's top sector is today's momentum leader") {
  auto p = synth_panel({4, 300, 9, Regime::DeterministicLeader});
  for (std::size_t t = 0; t + 1 < p.n_days(); ++t) {
    // Independent recomputation of the rule from prices.
    std::size_t want = 0;
    if (t >= kLeaderLookback) {
      double best = -1e300;
      for (std::size_t s = 0; s < 4; ++s) {
        const double m = p.close(s, t) / p.close(s, t - kLeaderLookback) - 1.0;
        if (m > best) {
          best = m;
          want = s;
        }
      }
    }
    CHECK(leader_rule(p, t) == want);
    CHECK(top_n_sectors(p, t + 1, 1)[0] == want);
  }
}

TEST_CASE("date splits snap inward and fractions split chronologically") {
  auto p = synth_panel({3, 100, 1, Regime::Gbm});
  auto idx = resolve_split(p, {"2000-01-01", p.dates[59], p.dates[60], "2999-12-31"});
  CHECK(idx.train_begin == 0);
  CHECK(idx.train_end == 59);
  CHECK(idx.test_begin == 60);
  CHECK(idx.test_end == 99);
  CHECK_THROWS_AS(resolve_split(p, {p.dates[0], p.dates[60], p.dates[50], p.dates[99]}), ValidationError);
  CHECK_THROWS_AS(resolve_split(p, {"1990-01-01", "1990-02-01", "1990-03-01", "1990-04-01"}), ValidationError);
  CHECK_THROWS_AS(resolve_split(p, {"x", p.dates[1], p.dates[2], p.dates[3]}), ValidationError);

  auto f = fraction_split(p, 0.7);
  CHECK(f.train_end == 69);
  CHECK(f.test_begin == 70);
  CHECK_THROWS_AS(fraction_split(p, 1.0), ValidationError);
  CHECK(is_iso_date("2024-02-29"));
  CHECK(!is_iso_date("2024-2-29"));
}
