#pragma once

#include <optional>
#include <string>
#include <vector>

#include "onarch/dates.hpp"

namespace onarch {

struct OhlcRecord {
  DayCount date = 0;
  double open = 0.0;
  double close = 0.0;
  std::optional<double> high;
  std::optional<double> low;
};

/// Per-stock dated price records aligned on the union calendar.
struct OhlcPanel {
  std::vector<std::string> stocks;
  // records[s] is date-ordered; alignment to `calendar` is by date lookup.
  std::vector<std::vector<OhlcRecord>> records;
  std::vector<DayCount> calendar;  // sorted union of all trading dates

  // missing[s] lists calendar dates with no record for stock s.
  std::vector<std::vector<DayCount>> missing;

  std::size_t n_stocks() const { return stocks.size(); }
};

struct IngestConfig {
  // Long format carries a leading `ticker` column; otherwise one file per
  // stock and the ticker is the file name stem. Auto-detected per file
  // from the header when unset.
  std::optional<bool> long_format;
};

// Reads one or more CSV files (`date,open,high,low,close`, high/low
// optional) into an aligned panel. Input order does not affect the result:
// stocks are sorted by ticker.
OhlcPanel ingest_ohlc(const std::vector<std::string>& paths,
                      const IngestConfig& config = {});

} // namespace onarch
