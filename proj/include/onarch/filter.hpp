#pragma once

#include <Eigen/Core>

#include "onarch/model.hpp"
#include "onarch/returns.hpp"

namespace onarch {

/// One equation rewritten over history positions. With a = 1..q and
/// j = 0..q:
///
///   sigma2_t = s2 + sum_a c_dd[a] rd_{t-a}^2
///                 + sum_j c_nn[j] rn_{t-j}^2
///                 + 2 sum_a c_nd[a] rd_{t-a} rn_{t-a}
///                 + 2 sum_a c_dn[a] rd_{t-a} rn_{t-a+1}
///                 + sum_a l_d[a] rd_{t-a}
///                 + sum_j l_n[j] rn_{t-j}
///
/// All six arrays have size q + 1 indexed by position; entries a
/// position cannot carry are zero. The day equation sees the same-date
/// overnight (c_nn[0], l_n[0] populated, kernel arguments shifted up by
/// one so position q reads the kernel at q + 1); the night equation is
/// strictly causal (position 0 empty, its DN pairing shifted so kernel
/// argument 1 sits at position 2).
struct PositionWeights {
  long q = 0;
  Eigen::VectorXd c_dd, c_nn, c_nd, c_dn, l_d, l_n;
};

PositionWeights assemble_positions(const EquationParams& params, Side side);

/// Daily single-stream layout: sigma2_t = s2 + sum_a k[a] r_{t-a}^2
///                                           + sum_a l[a] r_{t-a}.
struct DailyPositionWeights {
  long q = 0;
  Eigen::VectorXd k, l;  // size q + 1, position 0 zero
};

DailyPositionWeights assemble_positions(const DailyArchParams& params);

/// The daily layout lifted into the bivariate position structure (daily
/// return in the rd slot, night channels zero), so the filter and
/// likelihood passes serve all three targets.
PositionWeights daily_position_weights(const DailyArchParams& params);

/// Kernel value at argument tau, extending past the stored horizon:
/// parametric shapes evaluate their formula, tables return 0.
double eval_kernel_extended(const KernelSpec& spec, long tau);

/// Conditional variances over a panel. Rows 0..warmup-1 are NaN (their
/// history precedes the sample); negatives are reported, never clamped.
struct FilterResult {
  Eigen::MatrixXd sigma2;  // dates x stocks
  long warmup = 0;
  long negative_count = 0;  // sigma2 < 0 at t >= warmup
  double min_sigma2 = 0.0;  // over t >= warmup
};

FilterResult filter_equation(const EquationParams& params, Side side,
                             const ReturnPanel& panel);

struct BivariateFilterResult {
  FilterResult day, night;
};

BivariateFilterResult filter_volatility(const BivariateModel& model,
                                        const ReturnPanel& panel);

FilterResult filter_daily_arch(const DailyArchParams& params,
                               const ReturnPanel& panel);

/// Variance series for one stock's raw history vectors (used by the
/// simulator and small oracles); same conventions as above.
Eigen::VectorXd filter_series(const PositionWeights& w, double s2,
                              const Eigen::VectorXd& rd,
                              const Eigen::VectorXd& rn);

} // namespace onarch
