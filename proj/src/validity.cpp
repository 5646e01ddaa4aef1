#include "onarch/validity.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "onarch/errors.hpp"
#include "onarch/filter.hpp"
#include "onarch/optimize.hpp"
#include "onarch/quadform.hpp"
#include "onarch/simulate.hpp"

namespace onarch {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

StabilityReport check_stability(const BivariateModel& model) {
  // Position sums rather than bare kernel sums: these drive the actual
  // variance recursion (the day equation reads the overnight kernels
  // one argument deeper).
  const PositionWeights wd = assemble_positions(model.day, Side::day);
  const PositionWeights wn = assemble_positions(model.night, Side::night);

  StabilityReport rep;
  rep.k_dd_day = wd.c_dd.sum();
  rep.k_nn_day = wd.c_nn.sum();
  rep.k_dd_night = wn.c_dd.sum();
  rep.k_nn_night = wn.c_nn.sum();

  const double a = rep.k_dd_day, b = rep.k_nn_day;
  const double c = rep.k_dd_night, d = rep.k_nn_night;
  const double disc = (a - d) * (a - d) + 4.0 * b * c;
  double radius;
  if (disc >= 0.0) {
    const double root = std::sqrt(disc);
    rep.lambda1 = 0.5 * (a + d + root);
    rep.lambda2 = 0.5 * (a + d - root);
    radius = std::max(std::abs(rep.lambda1), std::abs(rep.lambda2));
  } else {
    rep.complex_pair = true;
    const double modulus = std::sqrt(a * d - b * c);
    rep.lambda1 = rep.lambda2 = modulus;
    radius = modulus;
  }
  rep.stable = radius < 1.0;

  if (rep.stable) {
    // <sigma2> = s2 + A <sigma2>: exact under independent residuals,
    // where cross and leverage terms average to zero.
    Eigen::Matrix2d ia;
    ia << 1.0 - a, -b, -c, 1.0 - d;
    Eigen::Vector2d s2(model.day.s2, model.night.s2);
    rep.fixed_point = ia.inverse() * s2;
  }
  return rep;
}

SinglePositivity check_positivity_single(const KernelSpec& k_dd,
                                         const KernelSpec& k_nn,
                                         const KernelSpec& k_nd) {
  if (k_dd.q != k_nn.q || k_dd.q != k_nd.q)
    throw DataError("kernel horizons disagree");
  SinglePositivity rep;
  const Eigen::VectorXd dd = kernel_values(k_dd);
  const Eigen::VectorXd nn = kernel_values(k_nn);
  const Eigen::VectorXd nd = kernel_values(k_nd);
  if (dd.minCoeff() < 0.0 || nn.minCoeff() < 0.0) {
    rep.applicable = false;
    return rep;
  }
  for (long tau = 1; tau <= k_dd.q; ++tau) {
    const double lhs = nd(tau - 1) * nd(tau - 1);
    const double rhs = dd(tau - 1) * nn(tau - 1);
    if (lhs > rhs + 1e-14 * std::max(1.0, rhs))
      rep.failing_lags.push_back(tau);
  }
  rep.pass = rep.failing_lags.empty();
  return rep;
}

namespace {

// Margin of the beta-split criterion at one lag: how much room the
// intra-day diagonal split has left, +inf when unconstrained, -inf
// when a coupling sits on a vanishing diagonal.
double margin_at(double u, double v) {
  if (u == kInf || v == kInf) return -kInf;
  if (u == 0.0 && v == 0.0) return kInf;
  if (u == 0.0) return 1.0 / v;
  if (v == 0.0) return 1.0 / u;
  return std::max((1.0 - v) / u, (1.0 - u) / v);
}

} // namespace

DoublePositivity check_positivity_double(const EquationParams& params,
                                         Side side) {
  const PositionWeights w = assemble_positions(params, side);
  const long q = w.q;
  DoublePositivity rep;
  if (w.c_dd.minCoeff() < 0.0 || w.c_nn.minCoeff() < 0.0) {
    rep.diagonal_ok = false;
    rep.margin = -kInf;
    rep.tightness = kInf;
    return rep;
  }

  // u(tau) / beta and v(tau) / (1 - beta) are the two block ratios;
  // the lag passes for a given beta iff their sum is <= 1.
  Eigen::VectorXd u(q + 1), v(q + 1);
  u(0) = v(0) = 0.0;
  for (long tau = 1; tau <= q; ++tau) {
    const double nd2 = w.c_nd(tau) * w.c_nd(tau);
    const double dn2 = w.c_dn(tau) * w.c_dn(tau);
    const double den_u = w.c_dd(tau) * w.c_nn(tau);
    const double den_v = w.c_dd(tau) * w.c_nn(tau - 1);
    u(tau) = nd2 == 0.0 ? 0.0 : (den_u > 0.0 ? nd2 / den_u : kInf);
    v(tau) = dn2 == 0.0 ? 0.0 : (den_v > 0.0 ? dn2 / den_v : kInf);
  }
  if (u.maxCoeff() == kInf || v.maxCoeff() == kInf) {
    rep.margin = -kInf;
    rep.tightness = kInf;
    return rep;
  }

  auto min_margin = [&](double beta) {
    double worst = kInf;
    for (long tau = 1; tau <= q; ++tau)
      worst = std::min(worst,
                       margin_at(u(tau) / beta, v(tau) / (1.0 - beta)));
    return worst;
  };
  auto max_load = [&](double beta) {
    double worst = 0.0;
    for (long tau = 1; tau <= q; ++tau)
      worst = std::max(worst, u(tau) / beta + v(tau) / (1.0 - beta));
    return worst;
  };

  const long grid = 1000;
  double best_beta = 0.5, best = -kInf;
  for (long i = 1; i < grid; ++i) {
    const double beta = double(i) / grid;
    const double m = min_margin(beta);
    if (m > best) {
      best = m;
      best_beta = beta;
    }
  }
  if (best == kInf) {
    rep.margin = kInf;
    rep.beta = best_beta;
    rep.tightness = 0.0;
    rep.pass = true;
    return rep;
  }
  const double lo = std::max(1.0 / grid, best_beta - 1.0 / grid);
  const double hi = std::min(1.0 - 1.0 / grid, best_beta + 1.0 / grid);
  rep.beta = golden_max(min_margin, lo, hi, 1e-6);
  rep.margin = min_margin(rep.beta);
  if (rep.margin < best) {
    rep.margin = best;
    rep.beta = best_beta;
  }

  double tight_beta = 0.5, tight = kInf;
  for (long i = 1; i < grid; ++i) {
    const double beta = double(i) / grid;
    const double m = max_load(beta);
    if (m < tight) {
      tight = m;
      tight_beta = beta;
    }
  }
  const double tlo = std::max(1.0 / grid, tight_beta - 1.0 / grid);
  const double thi = std::min(1.0 - 1.0 / grid, tight_beta + 1.0 / grid);
  const double refined =
      golden_max([&](double b) { return -max_load(b); }, tlo, thi, 1e-6);
  rep.tightness = std::min(tight, max_load(refined));

  rep.pass = rep.margin >= 1.0;
  return rep;
}

LeveragePositivity check_positivity_leverage(const EquationParams& params,
                                             Side side) {
  const QuadraticForm form = build_quadratic_matrix(params, side);
  const long dim = form.K.rows();
  LeveragePositivity rep;
  rep.bound = 4.0 * params.s2;

  std::vector<long> support;
  for (long i = 0; i < dim; ++i) {
    if (form.K(i, i) != 0.0) {
      support.push_back(i);
      continue;
    }
    // Inert coordinate: it must carry no coupling and no leverage,
    // otherwise the affine form is unbounded below.
    ++rep.deflated;
    const bool row_clean =
        form.K.row(i).cwiseAbs().sum() == 0.0 && form.L(i) == 0.0;
    if (!row_clean) {
      rep.value = kInf;
      return rep;
    }
  }

  const long n = long(support.size());
  Eigen::MatrixXd k(n, n);
  Eigen::VectorXd l(n);
  for (long i = 0; i < n; ++i) {
    l(i) = form.L(support[i]);
    for (long j = 0; j < n; ++j) k(i, j) = form.K(support[i], support[j]);
  }
  Eigen::LLT<Eigen::MatrixXd> llt(k);
  if (llt.info() != Eigen::Success) {
    rep.applicable = false;
    return rep;
  }
  rep.value = l.dot(llt.solve(l));
  rep.pass = rep.value <= rep.bound;
  return rep;
}

PositivityReport check_positivity(const EquationParams& params, Side side) {
  PositivityReport rep;
  rep.single =
      check_positivity_single(params.K_DD, params.K_NN, params.K_ND);
  rep.double_kernel = check_positivity_double(params, side);
  rep.leverage = check_positivity_leverage(params, side);

  const QuadraticForm form = build_quadratic_matrix(params, side);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_k(
      form.K, Eigen::EigenvaluesOnly);
  rep.min_eigenvalue_K = es_k.eigenvalues().minCoeff();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es_m(
      bordered_matrix(form), Eigen::EigenvaluesOnly);
  rep.min_eigenvalue_M = es_m.eigenvalues().minCoeff();

  rep.overall = rep.double_kernel.pass && rep.leverage.pass;
  return rep;
}

EmpiricalPositivity empirical_positivity(const BivariateModel& model,
                                         long n_stocks, long horizon,
                                         std::uint64_t seed) {
  SimConfig config;
  config.n_stocks = n_stocks;
  config.horizon = horizon;
  config.seed = seed;
  config.abort_on_negative = false;
  const SimResult sim = simulate_panel(model, config);
  EmpiricalPositivity rep;
  rep.stock_days = n_stocks * horizon;
  rep.negative_count = sim.negative_count;
  rep.burnin_floored = sim.burnin_floored;
  rep.min_sigma2_d = sim.min_sigma2_d;
  rep.min_sigma2_n = sim.min_sigma2_n;
  return rep;
}

EquationParams at_horizon(const EquationParams& params, long q,
                          long native_q, double cross_moment,
                          double cross_moment_leading, Side side) {
  EquationParams out = with_horizon(params, q);
  if (q != native_q) {
    // Unit-variance budget: whatever feedback mass the truncation
    // drops is returned to the baseline.
    const PositionWeights w = assemble_positions(out, side);
    out.s2 = 1.0 - w.c_dd.sum() - w.c_nn.sum() -
             2.0 * cross_moment * w.c_nd.sum() -
             2.0 * cross_moment_leading * w.c_dn.sum();
  }
  return out;
}

EquationParams with_omega_upper_bounds(const EquationParams& params) {
  EquationParams out = params;
  for (KernelSpec* k : {&out.K_DD, &out.K_NN, &out.K_ND, &out.K_DN})
    k->omega += k->omega_err;
  return out;
}

} // namespace onarch
