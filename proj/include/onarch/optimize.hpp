#pragma once

#include <Eigen/Core>
#include <functional>

namespace onarch {

/// Golden-section maximization on [lo, hi] to x-tolerance tol.
/// Unimodality is the caller's contract; on plateaus any maximizer may
/// be returned.
double golden_max(const std::function<double(double)>& f, double lo,
                  double hi, double tol);

struct AscentOptions {
  long max_iterations = 500;
  double gradient_tolerance = 1e-6;  // max-norm of the gradient
  double initial_step = 1.0;
  double armijo_slope = 1e-4;
  long max_backtracks = 60;
  long history = 10;  // L-BFGS memory
};

struct AscentResult {
  Eigen::VectorXd x;
  double value = 0.0;
  long iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
};

/// Objective callbacks return the value to MAXIMIZE and fill the
/// gradient (and Hessian) when the pointers are non-null. Returning
/// -infinity or NaN marks the point invalid; line searches back off,
/// and an invalid starting point fails immediately.
using GradientObjective =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;
using NewtonObjective = std::function<double(
    const Eigen::VectorXd&, Eigen::VectorXd*, Eigen::MatrixXd*)>;

/// Limited-memory BFGS ascent with Armijo backtracking.
AscentResult lbfgs_maximize(const GradientObjective& fg,
                            const Eigen::VectorXd& start,
                            const AscentOptions& options);

/// Newton ascent; the Hessian is flipped to negative-definite by an
/// eigenvalue modification before solving, then backtracking enforces
/// sufficient increase.
AscentResult newton_maximize(const NewtonObjective& fgh,
                             const Eigen::VectorXd& start,
                             const AscentOptions& options);

} // namespace onarch
