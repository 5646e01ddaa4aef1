#pragma once

// Scalar special functions needed by the Student likelihood and the
// chi-square p-values. Hand-rolled on purpose: the library depends on
// Eigen only, and these are a few dozen lines of classical series.

namespace onarch {

// psi(x) = d/dx ln Gamma(x), x > 0.
double digamma(double x);

// psi'(x), x > 0.
double trigamma(double x);

// Regularized lower incomplete gamma P(a, x), a > 0, x >= 0.
double gamma_p(double a, double x);

// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
double gamma_q(double a, double x);

// Survival function of a chi-square with k degrees of freedom.
double chi2_sf(double x, double k);

// Gaussian quantile used for the reported 95% confidence intervals.
inline constexpr double kGaussianQuantile95 = 1.98;

} // namespace onarch
