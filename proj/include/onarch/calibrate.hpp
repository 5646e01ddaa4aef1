#pragma once

#include <Eigen/Core>
#include <optional>
#include <string>
#include <vector>

#include "onarch/likelihood.hpp"
#include "onarch/model.hpp"
#include "onarch/optimize.hpp"
#include "onarch/returns.hpp"

namespace onarch {

/// Kernel argument read by each history position of an equation, 0
/// where the position is structurally empty. The day equation reads
/// same-date overnight terms (position j of NN/LN carries argument
/// j + 1, up to q + 1); the night equation is strictly causal and its
/// DN pairing sits one position late (argument a - 1 at position a).
/// This is the single statement of the layout that the free-fit
/// packing, the parametric Jacobians, and the filter all share.
Eigen::VectorXi channel_args(Side side, Channel channel, long q);

/// The kernel of one equation channel.
const KernelSpec& channel_kernel(const EquationParams& params, Channel ch);
KernelSpec& channel_kernel(EquationParams& params, Channel ch);

bool channel_is_leverage(Channel ch);
std::string channel_name(Channel ch);  // "DD".."LN"

/// Night-equation amplitude budget when the baseline variance is
/// pinned to zero: the two diagonal amplitudes are reduced to their
/// ratio gamma = g_NN / g_DD, g_DD being eliminated by the
/// unit-variance identity
///   g_DD h(alpha1, omega1) + gamma g_DD h(alpha2, omega2) = 1 - c,
/// with h the normalization sum over 1..q and c the cross-kernel
/// variance contribution 2 <rd rn> Khat_ND + 2 <rd rn+> Khat_DN.
struct ConstrainedNightSpec {
  double gamma = 0.0;
  double alpha1 = 0.0, omega1 = 0.0;  // K_DD shape
  double alpha2 = 0.0, omega2 = 0.0;  // K_NN shape
  double c = 0.0;
};

struct FitResult {
  Target target = Target::day;

  // The fitted model: equation for day/night targets, daily otherwise.
  EquationParams equation;
  DailyArchParams daily;

  // Pooled panel constants (day/night targets), for model assembly.
  double cross_moment = 0.0;
  double cross_moment_leading = 0.0;
  Eigen::Vector2d variance_shares{0.5, 0.5};

  std::optional<ConstrainedNightSpec> constrained;

  // Natural-parameter view of the optimum, aligned across the four
  // vectors; the Hessian is of the summed log-likelihood.
  std::vector<std::string> parameter_names;
  Eigen::VectorXd values;
  Eigen::VectorXd stderrs;  // 95% half-width is 1.98 x these
  Eigen::MatrixXd hessian;

  long n_points = 0;
  bool converged = false;
  long iterations = 0;
  double final_gradient_norm = 0.0;  // per point, max-norm
  LikelihoodReport likelihood;
  std::vector<std::string> flags;
};

struct CalibrationOptions {
  long q_free = 63;   // free-table stage horizon
  long q = 512;       // parametric stage horizon
  bool constrain_s2_zero = false;  // night only
  long max_iterations_free = 300;
  long max_iterations = 500;
  double gradient_tolerance = 1e-6;  // per point, max-norm
};

/// Stage 1: regression starting point. Squared target returns on the
/// lagged quadratic product channels (intercept = s2), and separately
/// on the lagged returns for the leverage channels; tables are the
/// slopes read at their kernel arguments. Falls back to a flagged
/// diagonal 1/tau spread when the panel is short (NT < 100 q) or the
/// regression start is unusable.
FitResult moment_init(const ReturnPanel& panel, Target target, long q,
                      std::vector<std::string>* flags);

/// Stage 2: maximum likelihood over free kernel tables at the stage-1
/// point (plus s2 and nu), by limited-memory ascent.
FitResult mle_free(const ReturnPanel& panel, Target target,
                   const FitResult& start, const CalibrationOptions& options);

/// Stage 3a: functional forms through the free tables. Quadratic
/// kernels take g tau^-alpha e^(-omega tau) by log-log least squares
/// over the dominant-sign subset; leverage kernels take g e^(-omega
/// tau) by log-linear least squares. Kernels with fewer than 3 usable
/// points, or nowhere outside their 95% bands, fall back to alpha = 1,
/// omega = 1/50 at matched integrated amplitude, flagged.
FitResult fit_functional_forms(const FitResult& free_fit, long q,
                               std::vector<std::string>* flags);

/// Stage 3b: maximum likelihood over the parametric shapes at horizon
/// q by Newton ascent with analytic Hessian.
FitResult mle_parametric(const ReturnPanel& panel, Target target,
                         const FitResult& start,
                         const CalibrationOptions& options);

/// Stage 3b under the zero-baseline night constraint: gamma and the
/// two diagonal shapes move, everything else stays at the starting
/// point, and nu is re-estimated on the final residuals.
FitResult mle_night_constrained(const ReturnPanel& panel,
                                const FitResult& start,
                                const CalibrationOptions& options);

/// The full three-stage pipeline.
FitResult calibrate_target(const ReturnPanel& panel, Target target,
                           const CalibrationOptions& options);

/// One-dimensional Student tail fit on fixed unit-variance residuals.
struct NuEstimate {
  double nu = 0.0;
  double stderr_ = 0.0;
  long n = 0;
  bool boundary = false;  // pinned against the search range
};

NuEstimate estimate_nu(const Eigen::VectorXd& residuals);

std::string to_json(const FitResult& fit);
FitResult fit_from_json(const std::string& text);
FitResult read_fit(const std::string& path);
void write_fit(const FitResult& fit, const std::string& path);

} // namespace onarch
