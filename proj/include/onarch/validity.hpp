#pragma once

#include <cstdint>
#include <vector>

#include "onarch/model.hpp"
#include "onarch/returns.hpp"

namespace onarch {

/// Spectral analysis of the 2x2 integrated-feedback matrix
/// [[Kdd_day, Knn_day], [Kdd_night, Knn_night]] plus the implied
/// unconditional variances (exact for independent residuals).
struct StabilityReport {
  double k_dd_day = 0, k_nn_day = 0, k_dd_night = 0, k_nn_night = 0;
  double lambda1 = 0, lambda2 = 0;  // lambda1 >= lambda2 when real
  bool complex_pair = false;        // then both lambdas hold the modulus
  bool stable = false;              // spectral radius < 1
  Eigen::Vector2d fixed_point{0, 0};  // <sigma2_d>, <sigma2_n> if stable
};

StabilityReport check_stability(const BivariateModel& model);

/// Lag-by-lag test K_ND(tau)^2 <= K_DD(tau) K_NN(tau); necessary and
/// sufficient when the DN kernel vanishes and the diagonals are
/// nonnegative.
struct SinglePositivity {
  bool applicable = true;  // false if a diagonal coefficient is negative
  bool pass = false;
  std::vector<long> failing_lags;
};

SinglePositivity check_positivity_single(const KernelSpec& k_dd,
                                         const KernelSpec& k_nn,
                                         const KernelSpec& k_nd);

/// Sufficient two-cross-kernel criterion: each overnight diagonal is
/// split by a common fraction beta between its two coupling partners,
/// each intra-day diagonal by a per-lag fraction that is eliminated.
/// Passes iff sup over beta of the min over lags of the margin M is
/// >= 1.
struct DoublePositivity {
  bool diagonal_ok = true;  // all diagonal positions nonnegative
  bool pass = false;
  double margin = 0.0;      // sup_beta min_tau M(beta, tau)
  double beta = 0.0;        // maximizing beta
  double tightness = 0.0;   // min_beta max_tau (u' + v'), passes iff <= 1
};

DoublePositivity check_positivity_double(const EquationParams& params,
                                         Side side);

/// Affine-term criterion L' K^{-1} L <= 4 s2, evaluated by linear solve
/// on the support of K (exact-zero inert coordinates are deflated; a
/// deflated coordinate carrying coupling or leverage fails outright).
struct LeveragePositivity {
  bool applicable = true;  // K positive-definite on its support
  bool pass = false;
  double value = 0.0;  // L' K^{-1} L
  double bound = 0.0;  // 4 s2
  long deflated = 0;
};

LeveragePositivity check_positivity_leverage(const EquationParams& params,
                                             Side side);

/// All three criteria plus the exact spectra of the assembled quadratic
/// form as ground truth.
struct PositivityReport {
  SinglePositivity single;
  DoublePositivity double_kernel;
  LeveragePositivity leverage;
  double min_eigenvalue_K = 0.0;  // quadratic matrix, dimension 2q+1
  double min_eigenvalue_M = 0.0;  // bordered matrix, dimension 2q+2
  bool overall = false;           // double_kernel.pass && leverage.pass
};

PositivityReport check_positivity(const EquationParams& params, Side side);

/// Negative-variance incidence over a long simulation (burn-in dates
/// are excluded; the budget is n_stocks * horizon emitted stock-days).
struct EmpiricalPositivity {
  long stock_days = 0;
  long negative_count = 0;
  long burnin_floored = 0;
  double min_sigma2_d = 0.0, min_sigma2_n = 0.0;
};

EmpiricalPositivity empirical_positivity(const BivariateModel& model,
                                         long n_stocks, long horizon,
                                         std::uint64_t seed);

/// Retabulates the equation at horizon q. When q differs from the
/// native horizon, the baseline is recomputed from the unit-variance
/// budget s2(q) = 1 - sum of feedback contributions, so the truncated
/// model keeps unconditional variance one (the tail mass moves into
/// the baseline).
EquationParams at_horizon(const EquationParams& params, long q,
                          long native_q, double cross_moment,
                          double cross_moment_leading, Side side);

/// The quadratic kernels' decay rates raised to the upper ends of their
/// confidence intervals (ill-determined cutoffs are read at the fast
/// end, which thins the far tail).
EquationParams with_omega_upper_bounds(const EquationParams& params);

} // namespace onarch
