#include "onarch/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "onarch/errors.hpp"

namespace onarch {

KernelSpec KernelSpec::power_law(double g, double alpha, double omega,
                                 long q) {
  KernelSpec k;
  k.shape = Shape::power_law_exp;
  k.g = g;
  k.alpha = alpha;
  k.omega = omega;
  k.q = q;
  return k;
}

KernelSpec KernelSpec::exponential(double g, double omega, long q) {
  KernelSpec k;
  k.shape = Shape::exponential;
  k.g = g;
  k.omega = omega;
  k.q = q;
  return k;
}

KernelSpec KernelSpec::table(Eigen::VectorXd coefficients) {
  KernelSpec k;
  k.shape = Shape::free;
  k.q = coefficients.size();
  k.coefficients = std::move(coefficients);
  return k;
}

KernelSpec KernelSpec::zero(long q) {
  return table(Eigen::VectorXd::Zero(q));
}

double eval_kernel(const KernelSpec& spec, long tau) {
  if (tau < 1 || tau > spec.q)
    throw std::out_of_range("kernel lag " + std::to_string(tau) +
                            " outside [1, " + std::to_string(spec.q) + "]");
  switch (spec.shape) {
    case KernelSpec::Shape::power_law_exp:
      return spec.g * std::pow(double(tau), -spec.alpha) *
             std::exp(-spec.omega * tau);
    case KernelSpec::Shape::exponential:
      return spec.g * std::exp(-spec.omega * tau);
    case KernelSpec::Shape::free:
      return spec.coefficients(tau - 1);
  }
  return 0.0;
}

Eigen::VectorXd kernel_values(const KernelSpec& spec) {
  if (spec.shape == KernelSpec::Shape::free) return spec.coefficients;
  Eigen::VectorXd v(spec.q);
  for (long tau = 1; tau <= spec.q; ++tau) v(tau - 1) = eval_kernel(spec, tau);
  return v;
}

double integrated_kernel(const KernelSpec& spec) {
  if (spec.shape == KernelSpec::Shape::free) return spec.coefficients.sum();
  double sum = 0.0;
  for (long tau = 1; tau <= spec.q; ++tau) sum += eval_kernel(spec, tau);
  return sum;
}

double power_law_sum(double alpha, double omega, long q) {
  if (q < 1) throw std::domain_error("power_law_sum: q < 1");
  double sum = 0.0;
  for (long tau = 1; tau <= q; ++tau)
    sum += std::pow(double(tau), -alpha) * std::exp(-omega * tau);
  return sum;
}

double characteristic_time(const KernelSpec& spec) {
  if (spec.omega == 0.0) return std::numeric_limits<double>::infinity();
  return 1.0 / spec.omega;
}

std::string shape_name(KernelSpec::Shape shape) {
  switch (shape) {
    case KernelSpec::Shape::power_law_exp: return "power-law-exp";
    case KernelSpec::Shape::exponential: return "exponential";
    case KernelSpec::Shape::free: return "free";
  }
  return "";
}

KernelSpec::Shape shape_from_name(const std::string& name) {
  if (name == "power-law-exp") return KernelSpec::Shape::power_law_exp;
  if (name == "exponential") return KernelSpec::Shape::exponential;
  if (name == "free") return KernelSpec::Shape::free;
  throw DataError("unknown kernel shape '" + name + "'");
}

} // namespace onarch
