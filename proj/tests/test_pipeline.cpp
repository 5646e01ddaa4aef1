#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "onarch/dates.hpp"
#include "onarch/errors.hpp"
#include "onarch/ohlc.hpp"
#include "onarch/returns.hpp"

using namespace onarch;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  const fs::path dir = fs::temp_directory_path() / "onarch_pipeline_test";
  fs::create_directories(dir);
  return dir;
}

// Weekday calendar of n dates starting 2024-01-01 (a Monday).
std::vector<DayCount> weekday_calendar(int n) {
  std::vector<DayCount> dates;
  DayCount d = parse_iso_date("2024-01-01");
  while (int(dates.size()) < n) {
    if (weekday(d) < 5) dates.push_back(d);
    ++d;
  }
  return dates;
}

// Deterministic smooth prices; the open sits between the neighboring
// closes so all four log returns stay small and well defined.
void write_stock_csv(const fs::path& path, const std::vector<DayCount>& dates,
                     int stock, bool with_high_low) {
  std::ofstream out(path);
  out << (with_high_low ? "date,open,high,low,close\n" : "date,open,close\n");
  double close_prev = 100.0 + 3.0 * stock;
  for (size_t t = 0; t < dates.size(); ++t) {
    const double open =
        close_prev * std::exp(0.01 * std::sin(0.37 * double(t) + stock));
    const double close =
        open * std::exp(0.012 * std::cos(0.23 * double(t) + 2 * stock));
    out << format_iso_date(dates[t]) << ',' << open << ',';
    if (with_high_low)
      out << std::max(open, close) * 1.005 << ','
          << std::min(open, close) * 0.995 << ',';
    out << close << '\n';
    close_prev = close;
  }
}

ReturnPanel toy_panel(int T, int S) {
  ReturnPanel p;
  p.dates = weekday_calendar(T);
  p.rd.resize(T, S);
  p.rn.resize(T, S);
  p.r.resize(T, S);
  p.valid_d = MaskMatrix::Ones(T, S);
  p.valid_n = MaskMatrix::Ones(T, S);
  p.valid_r = MaskMatrix::Ones(T, S);
  for (int s = 0; s < S; ++s) {
    p.tickers.push_back("S" + std::to_string(s));
    for (int t = 0; t < T; ++t) {
      p.rd(t, s) = std::sin(0.7 * t + s) + 0.1 * std::cos(3.1 * t);
      p.rn(t, s) = 0.6 * std::cos(0.9 * t + 2 * s);
      p.r(t, s) = p.rd(t, s) + p.rn(t, s);
    }
  }
  return p;
}

} // namespace

TEST_CASE("ingest merges disjoint calendars and is order independent") {
  const fs::path dir = tmp_dir();
  auto cal = weekday_calendar(40);
  std::vector<DayCount> cal_a(cal.begin(), cal.begin() + 30);
  std::vector<DayCount> cal_b(cal.begin() + 10, cal.end());
  write_stock_csv(dir / "AAA.csv", cal_a, 0, true);
  write_stock_csv(dir / "BBB.csv", cal_b, 1, false);

  const OhlcPanel p1 = ingest_ohlc(
      {(dir / "AAA.csv").string(), (dir / "BBB.csv").string()});
  const OhlcPanel p2 = ingest_ohlc(
      {(dir / "BBB.csv").string(), (dir / "AAA.csv").string()});

  REQUIRE(p1.n_stocks() == 2);
  CHECK(p1.stocks == std::vector<std::string>{"AAA", "BBB"});
  CHECK(p1.stocks == p2.stocks);
  CHECK(p1.calendar == cal);
  CHECK(p1.calendar == p2.calendar);
  // AAA misses the last 10 union dates, BBB the first 10.
  CHECK(p1.missing[0] ==
        std::vector<DayCount>(cal.begin() + 30, cal.end()));
  CHECK(p1.missing[1] ==
        std::vector<DayCount>(cal.begin(), cal.begin() + 10));
  for (size_t s = 0; s < 2; ++s) {
    REQUIRE(p1.records[s].size() == p2.records[s].size());
    for (size_t i = 0; i < p1.records[s].size(); ++i) {
      CHECK(p1.records[s][i].date == p2.records[s][i].date);
      CHECK(p1.records[s][i].close == p2.records[s][i].close);
    }
  }
}

TEST_CASE("long format and per-file format ingest identically") {
  const fs::path dir = tmp_dir();
  auto cal = weekday_calendar(25);
  write_stock_csv(dir / "XX.csv", cal, 0, true);
  write_stock_csv(dir / "YY.csv", cal, 1, true);

  // Stitch the two into one long file with a ticker column.
  std::ofstream out(dir / "long.csv");
  out << "ticker,date,open,high,low,close\n";
  for (const char* name : {"XX", "YY"}) {
    std::ifstream in(dir / (std::string(name) + ".csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line))
      if (!line.empty()) out << name << ',' << line << '\n';
  }
  out.close();

  const OhlcPanel split = ingest_ohlc(
      {(dir / "XX.csv").string(), (dir / "YY.csv").string()});
  const OhlcPanel merged = ingest_ohlc({(dir / "long.csv").string()});
  REQUIRE(merged.n_stocks() == 2);
  CHECK(merged.stocks == split.stocks);
  CHECK(merged.calendar == split.calendar);
  for (size_t s = 0; s < 2; ++s)
    for (size_t i = 0; i < split.records[s].size(); ++i) {
      CHECK(merged.records[s][i].open ==
            doctest::Approx(split.records[s][i].open).epsilon(1e-12));
      CHECK(merged.records[s][i].close ==
            doctest::Approx(split.records[s][i].close).epsilon(1e-12));
    }
}

TEST_CASE("ingest rejects missing files, bad headers and duplicates") {
  const fs::path dir = tmp_dir();
  CHECK_THROWS_AS(ingest_ohlc({(dir / "nope.csv").string()}), DataError);

  std::ofstream(dir / "bad.csv") << "date,openx,close\n2024-01-01,1,2\n";
  CHECK_THROWS_AS(ingest_ohlc({(dir / "bad.csv").string()}), DataError);

  std::ofstream(dir / "dup.csv")
      << "date,open,close\n2024-01-02,1,2\n2024-01-02,1,2\n";
  CHECK_THROWS_AS(ingest_ohlc({(dir / "dup.csv").string()}), DataError);
}

TEST_CASE("returns are the log ratios and add up exactly") {
  const fs::path dir = tmp_dir();
  auto cal = weekday_calendar(60);
  write_stock_csv(dir / "AAA.csv", cal, 0, true);
  write_stock_csv(dir / "BBB.csv", cal, 1, true);
  const OhlcPanel raw = ingest_ohlc(
      {(dir / "AAA.csv").string(), (dir / "BBB.csv").string()});
  const ReturnPanel p = compute_returns(raw);

  REQUIRE(p.n_dates() == 60);
  REQUIRE(p.n_stocks() == 2);
  // First date has no previous close.
  CHECK(p.valid_n(0, 0) == 0);
  CHECK(p.valid_r(0, 0) == 0);
  CHECK(p.valid_d(0, 0) == 1);

  for (int s = 0; s < 2; ++s)
    for (int t = 0; t < 60; ++t) {
      const OhlcRecord& rec = raw.records[s][t];
      CHECK(p.rd(t, s) ==
            doctest::Approx(std::log(rec.close / rec.open)).epsilon(1e-14));
      if (t > 0) {
        const OhlcRecord& prev = raw.records[s][t - 1];
        CHECK(p.rn(t, s) ==
              doctest::Approx(std::log(rec.open / prev.close))
                  .epsilon(1e-14));
        CHECK(std::abs(p.r(t, s) - (p.rd(t, s) + p.rn(t, s))) <= 1e-12);
      }
    }
}

TEST_CASE("overnights spanning more than five days are counted") {
  const fs::path dir = tmp_dir();
  auto cal = weekday_calendar(30);
  // Cut a two-week hole after date 9: the next overnight spans > 5 days.
  std::vector<DayCount> holed(cal.begin(), cal.begin() + 10);
  holed.insert(holed.end(), cal.begin() + 20, cal.end());
  write_stock_csv(dir / "AAA.csv", holed, 0, false);
  write_stock_csv(dir / "BBB.csv", holed, 1, false);
  const ReturnPanel p = compute_returns(ingest_ohlc(
      {(dir / "AAA.csv").string(), (dir / "BBB.csv").string()}));
  CHECK(p.gap_overnights == 2);  // one per stock
  // Plain weekends do not count.
  write_stock_csv(dir / "CCC.csv", cal, 0, false);
  write_stock_csv(dir / "DDD.csv", cal, 1, false);
  const ReturnPanel q = compute_returns(ingest_ohlc(
      {(dir / "CCC.csv").string(), (dir / "DDD.csv").string()}));
  CHECK(q.gap_overnights == 0);
}

TEST_CASE("normalization round trip recovers the centered returns") {
  ReturnPanel p = toy_panel(250, 4);
  // Mask a few entries so the trip exercises the valid-only paths.
  p.valid_d(17, 2) = 0;
  p.valid_r(17, 2) = 0;
  p.valid_n(33, 1) = 0;
  p.valid_r(33, 1) = 0;

  const ReturnPanel norm = normalize_panel(p);
  CHECK(norm.normalization.applied);
  const ReturnPanel back = denormalize_panel(norm);

  double worst = 0.0;
  for (int s = 0; s < p.n_stocks(); ++s) {
    // Stage 1 centering is not undone: compare against centered input.
    double md = 0, mn = 0;
    long nd = 0, nn = 0;
    for (int t = 0; t < p.n_dates(); ++t) {
      if (p.valid_d(t, s)) { md += p.rd(t, s); ++nd; }
      if (p.valid_n(t, s)) { mn += p.rn(t, s); ++nn; }
    }
    md /= double(nd);
    mn /= double(nn);
    for (int t = 0; t < p.n_dates(); ++t) {
      if (p.valid_d(t, s))
        worst = std::max(worst, std::abs(back.rd(t, s) - (p.rd(t, s) - md)));
      if (p.valid_n(t, s))
        worst = std::max(worst, std::abs(back.rn(t, s) - (p.rn(t, s) - mn)));
    }
  }
  CHECK(worst <= 1e-10);

  // Masks survive the trip, and the record is cleared on the way back.
  CHECK(back.valid_d(17, 2) == 0);
  CHECK(back.valid_n(33, 1) == 0);
  CHECK_FALSE(back.normalization.applied);
}

TEST_CASE("normalization needs at least two stocks") {
  CHECK_THROWS_AS(normalize_panel(toy_panel(100, 1)), DataError);
  CHECK_THROWS_AS(denormalize_panel(toy_panel(100, 2)), DataError);
}

TEST_CASE("normalized streams have unit scale") {
  const ReturnPanel norm = normalize_panel(toy_panel(400, 5));
  double sd = 0, sn = 0;
  long nd = 0, nn = 0;
  for (int s = 0; s < norm.n_stocks(); ++s)
    for (int t = 0; t < norm.n_dates(); ++t) {
      if (norm.valid_d(t, s)) { sd += norm.rd(t, s) * norm.rd(t, s); ++nd; }
      if (norm.valid_n(t, s)) { sn += norm.rn(t, s) * norm.rn(t, s); ++nn; }
    }
  CHECK(sd / double(nd) == doctest::Approx(1.0).epsilon(0.15));
  CHECK(sn / double(nn) == doctest::Approx(1.0).epsilon(0.15));
  // Daily return stays the exact sum after normalization.
  for (int t = 1; t < norm.n_dates(); ++t)
    CHECK(std::abs(norm.r(t, 0) - (norm.rd(t, 0) + norm.rn(t, 0))) <= 1e-12);
}

TEST_CASE("cross correlations on a constructed panel") {
  // rd alternates +-1, z has period four; rn = -rd/2 + z gives exact
  // same-date correlation -1/sqrt(5) on a multiple-of-four horizon.
  const int T = 400;
  ReturnPanel p;
  p.tickers = {"A"};
  p.dates = weekday_calendar(T);
  p.rd.resize(T, 1);
  p.rn.resize(T, 1);
  p.r.resize(T, 1);
  p.valid_d = MaskMatrix::Ones(T, 1);
  p.valid_n = MaskMatrix::Ones(T, 1);
  p.valid_r = MaskMatrix::Ones(T, 1);
  for (int t = 0; t < T; ++t) {
    const double rd = (t % 2 == 0) ? 1.0 : -1.0;
    const double z = (t % 4 < 2) ? 1.0 : -1.0;
    p.rd(t, 0) = rd;
    p.rn(t, 0) = -0.5 * rd + z;
    p.r(t, 0) = p.rd(t, 0) + p.rn(t, 0);
  }
  const CrossCorrelations c = cross_correlations(p);
  CHECK(c.same_date == doctest::Approx(-0.4472135954999579).epsilon(1e-12));
  CHECK(c.intraday_leading == doctest::Approx(0.4472135954999579).epsilon(0.02));
  // <r^2> = <rd^2> + <rn^2> + 2<rd rn>; the deviation field measures the
  // cross term's share.
  const double m_rd = p.rd.squaredNorm() / T;
  const double m_rn = p.rn.squaredNorm() / T;
  const double m_r = p.r.squaredNorm() / T;
  CHECK(c.additivity_deviation ==
        doctest::Approx(std::abs(m_r - m_rd - m_rn) / m_r).epsilon(1e-10));
}

TEST_CASE("weekly seasonality flags the heavy weekday") {
  ReturnPanel p = toy_panel(500, 3);
  // Triple every Monday overnight: its profile entry should dominate.
  for (int t = 0; t < p.n_dates(); ++t)
    if (weekday(p.dates[size_t(t)]) == 0)
      for (int s = 0; s < 3; ++s) p.rn(t, s) *= 3.0;
  const SeasonalityProfile prof = weekly_seasonality(p);
  REQUIRE(prof.overnight.size() == 7);
  // Monday is index 0; weekends carry no data.
  CHECK(prof.overnight(5) == 0.0);
  CHECK(prof.overnight(6) == 0.0);
  for (int d = 1; d < 5; ++d) CHECK(prof.overnight(0) > prof.overnight(d));
  // Profiles average to one over the populated weekdays.
  CHECK(prof.overnight.head(5).mean() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(prof.intraday.head(5).mean() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("moments summary flags degenerate streams") {
  ReturnPanel p = toy_panel(100, 2);
  p.rn.setZero();
  for (int s = 0; s < 2; ++s)
    for (int t = 0; t < 100; ++t) p.r(t, s) = p.rd(t, s);
  const MomentsSummary m = moments_summary(p);
  CHECK(m.overnight.degenerate);
  CHECK_FALSE(m.intraday.degenerate);
  CHECK(m.intraday.std > 0.0);
  // Kurtosis of any real series is at least 1.
  CHECK(m.intraday.kurtosis >= 1.0);
}

TEST_CASE("return panel csv round trip is exact") {
  const fs::path dir = tmp_dir();
  ReturnPanel p = toy_panel(80, 3);
  p.valid_n(0, 0) = 0;
  p.valid_r(0, 0) = 0;
  p.rn(0, 0) = 0.0;
  p.r(0, 0) = 0.0;
  const std::string path = (dir / "panel.csv").string();
  write_return_panel(path, p);
  const ReturnPanel q = read_return_panel(path);
  REQUIRE(q.n_dates() == p.n_dates());
  REQUIRE(q.n_stocks() == p.n_stocks());
  CHECK(q.tickers == p.tickers);
  CHECK(q.dates == p.dates);
  for (int s = 0; s < 3; ++s)
    for (int t = 0; t < 80; ++t) {
      CHECK(q.valid_d(t, s) == p.valid_d(t, s));
      CHECK(q.valid_n(t, s) == p.valid_n(t, s));
      CHECK(q.valid_r(t, s) == p.valid_r(t, s));
      if (p.valid_d(t, s)) CHECK(q.rd(t, s) == p.rd(t, s));
      if (p.valid_n(t, s)) CHECK(q.rn(t, s) == p.rn(t, s));
      if (p.valid_r(t, s)) CHECK(q.r(t, s) == p.r(t, s));
    }
}
