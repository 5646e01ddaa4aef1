#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "onarch/dates.hpp"
#include "onarch/ohlc.hpp"

namespace onarch {

using MaskMatrix =
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Inverse data of the three normalization stages, enough to undo
/// stages 2 and 3 exactly (stage 1 centering is recorded but not undone:
/// the round trip targets the centered raw returns).
struct NormalizationRecord {
  Eigen::VectorXd mean_d, mean_n;              // per stock, stage 1
  Eigen::MatrixXd dispersion_d, dispersion_n;  // dates x stocks, stage 2
  Eigen::VectorXd hist_d, hist_n;              // per stock, stage 3
  bool applied = false;
};

/// Aligned per-stock return series, dates x stocks, column per stock.
/// Invalid entries hold 0 and are masked. Panels built from prices have
/// the daily return wherever both components exist, with r = rd + rn
/// exactly; panels from a daily-only source may carry r alone.
struct ReturnPanel {
  std::vector<std::string> tickers;
  std::vector<DayCount> dates;
  Eigen::MatrixXd rd, rn, r;
  MaskMatrix valid_d, valid_n, valid_r;
  NormalizationRecord normalization;
  long gap_overnights = 0;  // overnight returns spanning > 5 calendar days

  Eigen::Index n_dates() const { return rd.rows(); }
  Eigen::Index n_stocks() const { return rd.cols(); }
  bool valid_daily(Eigen::Index t, Eigen::Index s) const {
    return valid_r(t, s) != 0;
  }
};

struct MomentsSummary {
  // Plain-moment estimators pooled over stocks and dates:
  // skew = <x^3>/<x^2>^{3/2}, kurt = <x^4>/<x^2>^2 on centered values.
  struct Row {
    double mean, std, skewness, kurtosis;
    bool degenerate;  // std == 0
  };
  Row intraday, overnight, daily;
};

struct CrossCorrelations {
  double same_date;          // corr(rd_t, rn_t)
  double intraday_leading;   // corr(rd_t, rn_{t+1})
  double additivity_deviation;  // |<r^2> - <rd^2> - <rn^2>| / <r^2>
};

struct SeasonalityProfile {
  // Root-mean-square return per weekday (0 = Monday), normalized to
  // mean 1 across weekdays that carry data; zero where no data.
  Eigen::VectorXd intraday;   // size 7
  Eigen::VectorXd overnight;  // size 7
};

ReturnPanel compute_returns(const OhlcPanel& panel);

// Three-stage normalization (center, cross-sectional dispersion, trailing
// per-stock scale), intraday and overnight streams treated separately.
// Requires >= 2 stocks.
ReturnPanel normalize_panel(const ReturnPanel& returns);

// Undoes stages 3 and 2, recovering the centered raw returns.
ReturnPanel denormalize_panel(const ReturnPanel& returns);

SeasonalityProfile weekly_seasonality(const ReturnPanel& returns);

MomentsSummary moments_summary(const ReturnPanel& returns);

CrossCorrelations cross_correlations(const ReturnPanel& returns);

// CSV schema: ticker,date,r_intraday,r_overnight,r_daily with empty
// fields for missing values.
void write_return_panel(const std::string& path, const ReturnPanel& panel);
ReturnPanel read_return_panel(const std::string& path);

// Sidecar serialization of the normalization record.
void write_normalization(const std::string& path,
                         const ReturnPanel& panel);

} // namespace onarch
