#include "onarch/optimize.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <deque>
#include <limits>
#include <stdexcept>

namespace onarch {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

bool usable(double v) { return std::isfinite(v); }
} // namespace

double golden_max(const std::function<double(double)>& f, double lo,
                  double hi, double tol) {
  if (!(lo <= hi)) throw std::invalid_argument("golden_max: empty interval");
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - phi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

namespace {

/// Backtracking line search along d from (x, fx); returns the accepted
/// point through x/fx/g and false when every step fails the test.
bool armijo_step(const GradientObjective& fg, Eigen::VectorXd& x, double& fx,
                 Eigen::VectorXd& g, const Eigen::VectorXd& d,
                 double slope, double initial, long max_backtracks) {
  const double dg = d.dot(g);
  double step = initial;
  for (long k = 0; k <= max_backtracks; ++k) {
    Eigen::VectorXd xt = x + step * d;
    Eigen::VectorXd gt(x.size());
    const double ft = fg(xt, &gt);
    if (usable(ft) && ft >= fx + slope * step * dg) {
      x = std::move(xt);
      fx = ft;
      g = std::move(gt);
      return true;
    }
    step *= 0.5;
  }
  return false;
}

} // namespace

AscentResult lbfgs_maximize(const GradientObjective& fg,
                            const Eigen::VectorXd& start,
                            const AscentOptions& options) {
  AscentResult res;
  res.x = start;
  Eigen::VectorXd g(start.size());
  res.value = fg(res.x, &g);
  if (!usable(res.value))
    throw std::invalid_argument("lbfgs_maximize: invalid starting point");

  // Internally minimize -f: descent directions on gm = -g.
  std::deque<Eigen::VectorXd> ss, ys;  // position / (-gradient) differences
  std::deque<double> rhos;

  for (res.iterations = 0; res.iterations < options.max_iterations;
       ++res.iterations) {
    res.gradient_norm = g.lpNorm<Eigen::Infinity>();
    if (res.gradient_norm <= options.gradient_tolerance) {
      res.converged = true;
      return res;
    }

    Eigen::VectorXd gm = -g;
    // Two-loop recursion for the quasi-Newton direction d = -H gm.
    Eigen::VectorXd d = gm;
    std::vector<double> alpha(ss.size());
    for (long i = long(ss.size()) - 1; i >= 0; --i) {
      alpha[i] = rhos[i] * ss[i].dot(d);
      d -= alpha[i] * ys[i];
    }
    if (!ss.empty()) {
      const double gamma = ss.back().dot(ys.back()) / ys.back().squaredNorm();
      d *= gamma;
    }
    for (size_t i = 0; i < ss.size(); ++i) {
      const double beta = rhos[i] * ys[i].dot(d);
      d += (alpha[i] - beta) * ss[i];
    }
    d = -d;  // ascent direction on f

    if (d.dot(g) <= 0.0) {
      d = g;  // fall back to steepest ascent
      ss.clear();
      ys.clear();
      rhos.clear();
    }

    const Eigen::VectorXd x_prev = res.x;
    const Eigen::VectorXd g_prev = g;
    const double step0 = res.iterations == 0 ? options.initial_step : 1.0;
    if (!armijo_step(fg, res.x, res.value, g, d, options.armijo_slope, step0,
                     options.max_backtracks)) {
      res.gradient_norm = g.lpNorm<Eigen::Infinity>();
      return res;  // stalled: no acceptable step along d
    }

    Eigen::VectorXd s = res.x - x_prev;
    Eigen::VectorXd y = g_prev - g;  // = (-g) - (-g_prev)
    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      ss.push_back(std::move(s));
      ys.push_back(std::move(y));
      rhos.push_back(1.0 / sy);
      if (long(ss.size()) > options.history) {
        ss.pop_front();
        ys.pop_front();
        rhos.pop_front();
      }
    }
  }
  res.gradient_norm = g.lpNorm<Eigen::Infinity>();
  res.converged = res.gradient_norm <= options.gradient_tolerance;
  return res;
}

AscentResult newton_maximize(const NewtonObjective& fgh,
                             const Eigen::VectorXd& start,
                             const AscentOptions& options) {
  const long n = start.size();
  AscentResult res;
  res.x = start;
  Eigen::VectorXd g(n);
  Eigen::MatrixXd h(n, n);
  res.value = fgh(res.x, &g, &h);
  if (!usable(res.value))
    throw std::invalid_argument("newton_maximize: invalid starting point");

  const GradientObjective fg = [&fgh](const Eigen::VectorXd& x,
                                      Eigen::VectorXd* grad) {
    return fgh(x, grad, nullptr);
  };

  for (res.iterations = 0; res.iterations < options.max_iterations;
       ++res.iterations) {
    res.gradient_norm = g.lpNorm<Eigen::Infinity>();
    if (res.gradient_norm <= options.gradient_tolerance) {
      res.converged = true;
      return res;
    }

    // Modified Newton direction: clamp eigenvalues away from zero on
    // the concave side, so d = -H~^{-1} g is always an ascent direction.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(h);
    const Eigen::VectorXd& lam = eig.eigenvalues();
    const double scale = std::max(1.0, lam.cwiseAbs().maxCoeff());
    const double cap = -1e-8 * scale;
    Eigen::VectorXd inv(n);
    for (long i = 0; i < n; ++i) inv(i) = 1.0 / std::min(lam(i), cap);
    Eigen::VectorXd d =
        -(eig.eigenvectors() *
          (inv.asDiagonal() * (eig.eigenvectors().transpose() * g)));
    if (d.dot(g) <= 0.0) d = g;

    if (!armijo_step(fg, res.x, res.value, g, d, options.armijo_slope,
                     options.initial_step, options.max_backtracks)) {
      res.gradient_norm = g.lpNorm<Eigen::Infinity>();
      return res;
    }
    fgh(res.x, nullptr, &h);  // Hessian only at accepted iterates
  }
  res.gradient_norm = g.lpNorm<Eigen::Infinity>();
  res.converged = res.gradient_norm <= options.gradient_tolerance;
  return res;
}

} // namespace onarch
