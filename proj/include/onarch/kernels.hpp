#pragma once

#include <Eigen/Core>
#include <string>

namespace onarch {

/// Lag-indexed feedback coefficients over tau = 1..q. Parametric shapes
/// and tabulated coefficients share one evaluation interface so the
/// filtering and likelihood code is agnostic to the calibration stage.
struct KernelSpec {
  enum class Shape { power_law_exp, exponential, free };

  Shape shape = Shape::power_law_exp;
  long q = 1;

  // power_law_exp: g * tau^(-alpha) * exp(-omega * tau)
  // exponential:   g * exp(-omega * tau)
  double g = 0.0;
  double alpha = 0.0;
  double omega = 0.0;

  // 95% half-widths from the inverse Hessian; 0 when not calibrated.
  double g_err = 0.0;
  double alpha_err = 0.0;
  double omega_err = 0.0;

  // free shape: coefficients[i] is the value at lag i + 1.
  Eigen::VectorXd coefficients;

  static KernelSpec power_law(double g, double alpha, double omega, long q);
  static KernelSpec exponential(double g, double omega, long q);
  static KernelSpec table(Eigen::VectorXd coefficients);
  static KernelSpec zero(long q);  // free all-zero kernel
};

double eval_kernel(const KernelSpec& spec, long tau);

/// Values at lags 1..q as a vector; [i] holds lag i + 1.
Eigen::VectorXd kernel_values(const KernelSpec& spec);

/// Sum over tau = 1..q (the hat quantities and the stability inputs).
double integrated_kernel(const KernelSpec& spec);

/// Sum of tau^(-alpha) * exp(-omega * tau) over tau = 1..q: the
/// normalization integral of a unit-amplitude power-law kernel.
double power_law_sum(double alpha, double omega, long q);

/// 1/omega, infinity when the decay rate is 0.
double characteristic_time(const KernelSpec& spec);

std::string shape_name(KernelSpec::Shape shape);
KernelSpec::Shape shape_from_name(const std::string& name);

} // namespace onarch
