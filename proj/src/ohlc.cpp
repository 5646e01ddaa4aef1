#include "onarch/ohlc.hpp"

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>

#include "onarch/csv.hpp"
#include "onarch/errors.hpp"

namespace onarch {

namespace {

OhlcRecord parse_record(const CsvTable& t, const std::vector<std::string>& row,
                        int c_date, int c_open, int c_high, int c_low,
                        int c_close, const std::string& context) {
  OhlcRecord rec;
  rec.date = parse_iso_date(row.at(c_date));
  rec.open = parse_double(row.at(c_open), context);
  rec.close = parse_double(row.at(c_close), context);
  if (rec.open <= 0.0 || rec.close <= 0.0)
    throw DataError(context + ": non-positive price");
  auto opt = [&](int c) -> std::optional<double> {
    if (c < 0 || row.at(c).empty()) return std::nullopt;
    return parse_double(row.at(c), context);
  };
  rec.high = opt(c_high);
  rec.low = opt(c_low);
  if (rec.high && rec.low) {
    const double lo = std::min(rec.open, rec.close);
    const double hi = std::max(rec.open, rec.close);
    if (*rec.low > lo || *rec.high < hi || *rec.low <= 0.0)
      throw DataError(context + ": high/low inconsistent with open/close");
  }
  (void)t;
  return rec;
}

} // namespace

OhlcPanel ingest_ohlc(const std::vector<std::string>& paths,
                      const IngestConfig& config) {
  // ticker -> date -> record; the map keys give order invariance for free.
  std::map<std::string, std::map<DayCount, OhlcRecord>> by_stock;

  for (const auto& path : paths) {
    CsvTable t = read_csv(path);
    const int c_ticker = t.column("ticker");
    const bool long_format = config.long_format.value_or(c_ticker >= 0);
    if (long_format && c_ticker < 0)
      throw DataError(path + ": long format requires a ticker column");
    const int c_date = t.column("date");
    const int c_open = t.column("open");
    const int c_close = t.column("close");
    if (c_date < 0 || c_open < 0 || c_close < 0)
      throw DataError(path + ": header must contain date, open, close");
    const int c_high = t.column("high");
    const int c_low = t.column("low");
    const std::string stem = std::filesystem::path(path).stem().string();

    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      const auto& row = t.rows[i];
      const std::string context = path + ":" + std::to_string(i + 2);
      if (row.size() < t.header.size())
        throw DataError(context + ": malformed row");
      const std::string ticker = long_format ? row.at(c_ticker) : stem;
      OhlcRecord rec = parse_record(t, row, c_date, c_open, c_high, c_low,
                                    c_close, context);
      auto [it, inserted] = by_stock[ticker].emplace(rec.date, rec);
      if (!inserted)
        throw DataError(context + ": duplicate date " +
                        format_iso_date(rec.date) + " for " + ticker);
    }
  }

  OhlcPanel panel;
  std::set<DayCount> calendar;
  for (const auto& [ticker, recs] : by_stock)
    for (const auto& [d, rec] : recs) calendar.insert(d);
  panel.calendar.assign(calendar.begin(), calendar.end());

  for (const auto& [ticker, recs] : by_stock) {
    panel.stocks.push_back(ticker);
    std::vector<OhlcRecord> series;
    std::vector<DayCount> gaps;
    series.reserve(recs.size());
    for (DayCount d : panel.calendar) {
      auto it = recs.find(d);
      if (it == recs.end())
        gaps.push_back(d);
      else
        series.push_back(it->second);
    }
    panel.records.push_back(std::move(series));
    panel.missing.push_back(std::move(gaps));
  }
  return panel;
}

} // namespace onarch
