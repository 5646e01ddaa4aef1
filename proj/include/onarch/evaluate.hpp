#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "onarch/calibrate.hpp"
#include "onarch/model.hpp"
#include "onarch/returns.hpp"

namespace onarch {

/// Scaled innovations xi_t = r_t / sigma_t of one return stream,
/// pooled over the panel past the warm-up, with their tail fit and the
/// exceedance curve P(|xi| > y) on a 50-point log grid.
struct ResidualSeries {
  std::string label;  // "day", "night", "daily"
  Eigen::MatrixXd xi;  // dates x stocks, NaN outside the evaluated set
  Eigen::VectorXd pooled;  // evaluated points, stock-major
  long n = 0;
  double mean = 0.0;
  double mean_square = 0.0;  // the model normalizes this to 1
  double kurtosis = 0.0;     // plain <x^4>/<x^2>^2
  bool kurtosis_divergent = false;  // tail fit implies no 4th moment
  bool degenerate = false;          // every evaluated return is zero
  NuEstimate nu_fit;
  Eigen::MatrixXd cdf_table;  // 50 x 2: threshold, p_exceed
};

struct ResidualDiagnostics {
  std::vector<ResidualSeries> series;
};

/// One stream against one equation; the daily target runs the lifted
/// layout. Throws NumericalError when an evaluated point has a
/// nonpositive variance.
ResidualSeries extract_residual_series(const EquationParams& params,
                                       Target target,
                                       const ReturnPanel& panel);

ResidualDiagnostics extract_residuals(const BivariateModel& model,
                                      const ReturnPanel& panel);
ResidualDiagnostics extract_residuals(const DailyArchParams& params,
                                      const ReturnPanel& panel);

/// Baseline share of the filtered variance, s2 / <sigma2>, and its
/// complement, the share fed back from past returns.
struct BaselineRatioReport {
  double rD_ratio = 0.0, rN_ratio = 0.0;
  double feedback_D = 0.0, feedback_N = 0.0;
};

BaselineRatioReport baseline_ratios(const BivariateModel& model,
                                    const ReturnPanel& panel);
double baseline_ratio(const DailyArchParams& params,
                      const ReturnPanel& panel);

/// Variance share map between the daily and the split predictions:
/// a daily variance divides by the pooled shares, and the two split
/// variances recombine with twice the same-date cross moment.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> equivalent_vols_daily_to_bivariate(
    const Eigen::MatrixXd& sigma2_daily, const Eigen::Vector2d& shares);
Eigen::MatrixXd equivalent_vol_bivariate_to_daily(
    const Eigen::MatrixXd& sigma2_d, const Eigen::MatrixXd& sigma2_n,
    double cross_moment);

/// One cell of the in/out-of-sample grid: a prediction target, the
/// model that produced it, and the average per-point likelihoods as
/// percentages (exp of the mean full log-likelihood). Derived cells
/// come through the share map rather than the model's own stream.
struct ISOSCell {
  std::string prediction;  // "day", "night", "daily"
  std::string model;       // "bivariate", "daily-arch"
  bool derived = false;
  double l_is = 0.0, l_os = 0.0;       // averaged over the two halves
  Eigen::Vector2d is_half{0.0, 0.0};   // by calibration half
  Eigen::Vector2d os_half{0.0, 0.0};
  long skipped = 0;  // evaluated points without a usable variance
};

struct ISOSReport {
  long q = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> half1, half2;  // tickers by half
  std::vector<ISOSCell> cells;            // 6, prediction-major
  std::vector<std::string> flags;
};

/// Half-pool comparison of the bivariate model (day equation plus
/// zero-baseline night equation) against the single-stream model:
/// calibrate both on each half, evaluate every prediction cell on the
/// calibration half (IS) and on the other half (OS). The split is by
/// hash of ticker and seed, so it is reproducible and independent of
/// stock order. Requires >= 4 stocks.
ISOSReport isos_compare(const ReturnPanel& panel, long q, std::uint64_t seed,
                        const CalibrationOptions& options = {});

/// Equality test of two independently fitted parameter vectors:
/// Xi = f' Cov(f)^-1 f with f the parameter differences outside the
/// excluded set and Cov(f) the sum of the two inverse information
/// matrices; p-value against chi-squared with dim(f) degrees of
/// freedom.
struct WaldReport {
  double xi_n = 0.0;
  long dof = 0;
  double p_value = 1.0;
  std::vector<std::string> excluded;
  std::vector<std::string> tested;
  Eigen::VectorXd theta1, theta2;  // tested coordinates
  Eigen::VectorXd difference;
  Eigen::VectorXd relative_difference;  // |a-b| / max(|a|, |b|)
  long n1 = 0, n2 = 0;
  std::vector<std::string> flags;
};

WaldReport wald_universality(const FitResult& fit1, const FitResult& fit2,
                             const std::vector<std::string>& exclude);

/// CSV export of an exceedance curve: "threshold,p_exceed" rows.
std::string cdf_to_csv(const Eigen::MatrixXd& cdf_table);

std::string to_json(const ResidualDiagnostics& diagnostics);
std::string to_json(const BaselineRatioReport& report);
std::string to_json(const ISOSReport& report);
std::string to_json(const WaldReport& report);

} // namespace onarch
