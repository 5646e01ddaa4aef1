#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "onarch/filter.hpp"
#include "onarch/model.hpp"
#include "onarch/quadform.hpp"
#include "onarch/rng.hpp"
#include "onarch/validity.hpp"

using namespace onarch;

namespace {

constexpr double kInfinity = std::numeric_limits<double>::infinity();

std::string source_dir() {
  const char* dir = std::getenv("ONARCH_SOURCE_DIR");
  REQUIRE(dir != nullptr);
  return std::string(dir);
}

// Geometric sum of g * exp(-omega * tau) over tau = 1..q, closed form.
double exp_kernel_sum(double g, double omega, long q) {
  const double r = std::exp(-omega);
  return g * r * (1.0 - std::pow(r, double(q))) / (1.0 - r);
}

// Diagonal-only model with exponential kernels: the stability matrix
// is available in closed form.
BivariateModel diagonal_model(long q) {
  BivariateModel m;
  m.q = q;
  m.day.s2 = 0.30;
  m.day.nu = 10.0;
  m.day.K_DD = KernelSpec::exponential(0.040, 0.08, q);
  m.day.K_NN = KernelSpec::exponential(0.020, 0.10, q);
  m.day.K_ND = KernelSpec::zero(q);
  m.day.K_DN = KernelSpec::zero(q);
  m.day.L_D = KernelSpec::zero(q);
  m.day.L_N = KernelSpec::zero(q);
  m.night = m.day;
  m.night.s2 = 0.20;
  m.night.nu = 5.0;
  m.night.K_DD = KernelSpec::exponential(0.022, 0.09, q);
  m.night.K_NN = KernelSpec::exponential(0.035, 0.07, q);
  return m;
}

EquationParams zero_equation(long q) {
  EquationParams eq;
  eq.s2 = 1.0;
  eq.nu = 8.0;
  eq.K_DD = KernelSpec::zero(q);
  eq.K_NN = KernelSpec::zero(q);
  eq.K_ND = KernelSpec::zero(q);
  eq.K_DN = KernelSpec::zero(q);
  eq.L_D = KernelSpec::zero(q);
  eq.L_N = KernelSpec::zero(q);
  return eq;
}

Eigen::VectorXd random_table(Rng& rng, long q, double lo, double hi) {
  Eigen::VectorXd v(q);
  for (long i = 0; i < q; ++i) v(i) = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("published parameters: spectrum and feedback mass") {
  const BivariateModel model =
      read_bivariate_model(source_dir() + "/data/params_us_day.json",
                           source_dir() + "/data/params_us_night.json");
  REQUIRE(model.q == 512);

  const StabilityReport rep = check_stability(model);
  CHECK(!rep.complex_pair);
  CHECK(rep.stable);
  CHECK(rep.lambda1 == doctest::Approx(0.9468676079338748).epsilon(1e-9));
  CHECK(rep.lambda2 == doctest::Approx(0.4831420399285884).epsilon(1e-9));
  CHECK(rep.k_dd_day == doctest::Approx(0.836137).epsilon(1e-4));
  CHECK(rep.k_nn_day == doctest::Approx(0.093433).epsilon(1e-4));
  CHECK(rep.k_dd_night == doctest::Approx(0.418347).epsilon(1e-4));
  CHECK(rep.k_nn_night == doctest::Approx(0.593873).epsilon(1e-4));

  // The fixed point solves (I - A) x = s2 and sits at order one in the
  // per-side variance units.
  Eigen::Matrix2d ia;
  ia << 1.0 - rep.k_dd_day, -rep.k_nn_day, -rep.k_dd_night,
      1.0 - rep.k_nn_night;
  const Eigen::Vector2d rhs(model.day.s2, model.night.s2);
  CHECK((ia * rep.fixed_point - rhs).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(rep.fixed_point.minCoeff() > 0.0);
}

TEST_CASE("stability matrix entries follow the position sums") {
  const long q = 40;
  BivariateModel m = diagonal_model(q);
  m.day.K_NN = KernelSpec::zero(q);  // lower-triangular feedback matrix

  const double a = exp_kernel_sum(0.040, 0.08, q);
  const double c = exp_kernel_sum(0.022, 0.09, q);
  const double d = exp_kernel_sum(0.035, 0.07, q);

  const StabilityReport rep = check_stability(m);
  CHECK(rep.k_dd_day == doctest::Approx(a).epsilon(1e-14));
  CHECK(rep.k_nn_day == 0.0);
  CHECK(rep.k_dd_night == doctest::Approx(c).epsilon(1e-14));
  CHECK(rep.k_nn_night == doctest::Approx(d).epsilon(1e-14));
  CHECK(!rep.complex_pair);
  CHECK(rep.lambda1 == doctest::Approx(std::max(a, d)).epsilon(1e-13));
  CHECK(rep.lambda2 == doctest::Approx(std::min(a, d)).epsilon(1e-13));
  CHECK(rep.stable);

  // Triangular system: forward substitution gives the fixed point.
  const double xd = m.day.s2 / (1.0 - a);
  const double xn = (m.night.s2 + c * xd) / (1.0 - d);
  CHECK(rep.fixed_point(0) == doctest::Approx(xd).epsilon(1e-12));
  CHECK(rep.fixed_point(1) == doctest::Approx(xn).epsilon(1e-12));
}

TEST_CASE("complex pair takes the common modulus") {
  const long q = 16;
  BivariateModel m;
  m.q = q;
  m.day = zero_equation(q);
  m.night = zero_equation(q);
  m.day.s2 = 0.5;
  m.night.s2 = 0.5;
  // Purely off-diagonal feedback of opposite signs: conjugate pair.
  m.day.K_NN = KernelSpec::exponential(0.050, 0.20, q);
  m.night.K_DD = KernelSpec::exponential(-0.030, 0.25, q);

  const StabilityReport rep = check_stability(m);
  // Day NN enters one argument deeper (lags 2..q+1 of the kernel).
  const double b =
      exp_kernel_sum(0.050, 0.20, q + 1) - 0.050 * std::exp(-0.20);
  const double c = exp_kernel_sum(-0.030, 0.25, q);
  REQUIRE(b * c < 0.0);
  CHECK(rep.complex_pair);
  CHECK(rep.k_nn_day == doctest::Approx(b).epsilon(1e-13));
  const double modulus = std::sqrt(-b * c);
  CHECK(rep.lambda1 == doctest::Approx(modulus).epsilon(1e-12));
  CHECK(rep.lambda2 == doctest::Approx(modulus).epsilon(1e-12));
  CHECK(rep.stable);

  // Scale the couplings until the modulus crosses one.
  m.day.K_NN.g *= 40.0;
  m.night.K_DD.g *= 40.0;
  const StabilityReport hot = check_stability(m);
  CHECK(hot.complex_pair);
  CHECK(hot.lambda1 > 1.0);
  CHECK(!hot.stable);
}

TEST_CASE("per-lag cross bound matches the two-by-two spectra") {
  Rng rng(2026, 7);
  long checked = 0, inapplicable = 0, failures_seen = 0;
  for (int rep_i = 0; rep_i < 60; ++rep_i) {
    const long q = 1 + long(rng.uniform(0.0, 6.0));
    Eigen::VectorXd dd = random_table(rng, q, 0.0, 0.30);
    Eigen::VectorXd nn = random_table(rng, q, 0.0, 0.30);
    const Eigen::VectorXd nd = random_table(rng, q, -0.25, 0.25);
    if (rep_i % 7 == 3) dd(q - 1) = -0.05;  // hit the inapplicable branch

    const SinglePositivity s = check_positivity_single(
        KernelSpec::table(dd), KernelSpec::table(nn), KernelSpec::table(nd));
    if (dd.minCoeff() < 0.0 || nn.minCoeff() < 0.0) {
      CHECK(!s.applicable);
      ++inapplicable;
      continue;
    }
    REQUIRE(s.applicable);
    bool all_psd = true;
    for (long t = 0; t < q; ++t) {
      Eigen::Matrix2d two;
      two << dd(t), nd(t), nd(t), nn(t);
      Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(two,
                                                        Eigen::EigenvaluesOnly);
      const bool psd = es.eigenvalues().minCoeff() >= -1e-12;
      all_psd = all_psd && psd;
      const bool flagged =
          std::find(s.failing_lags.begin(), s.failing_lags.end(), t + 1) !=
          s.failing_lags.end();
      CHECK(flagged == !psd);
    }
    CHECK(s.pass == all_psd);
    if (!s.pass) ++failures_seen;
    ++checked;
  }
  CHECK(checked >= 40);
  CHECK(inapplicable >= 5);
  CHECK(failures_seen >= 5);  // the draw straddles the boundary
}

TEST_CASE("beta-split criterion is one-sided for the quadratic spectrum") {
  Rng rng(2026, 8);
  long passes = 0;
  for (int rep_i = 0; rep_i < 40; ++rep_i) {
    const long q = 1 + long(rng.uniform(0.0, 6.0));
    EquationParams eq = zero_equation(q);
    eq.K_DD = KernelSpec::table(random_table(rng, q, 0.02, 0.25));
    eq.K_NN = KernelSpec::table(random_table(rng, q, 0.02, 0.25));
    eq.K_ND = KernelSpec::table(random_table(rng, q, -0.08, 0.08));
    eq.K_DN = KernelSpec::table(random_table(rng, q, -0.08, 0.08));
    eq.s2 = 0.5;
    const Side side = rep_i % 2 == 0 ? Side::day : Side::night;

    const PositivityReport rep = check_positivity(eq, side);
    if (rep.double_kernel.pass) {
      CHECK(rep.min_eigenvalue_K >= -1e-10);
      ++passes;
    }
    CHECK(rep.overall == (rep.double_kernel.pass && rep.leverage.pass));
  }
  CHECK(passes >= 5);

  // A diagonal-only equation is unconstrained at every lag.
  EquationParams diag = zero_equation(6);
  diag.K_DD = KernelSpec::exponential(0.05, 0.1, 6);
  diag.K_NN = KernelSpec::exponential(0.04, 0.1, 6);
  const DoublePositivity easy = check_positivity_double(diag, Side::night);
  CHECK(easy.diagonal_ok);
  CHECK(easy.pass);
  CHECK(easy.margin >= 1.0);

  // An oversized coupling on thin diagonals violates the exact form too.
  EquationParams bad = zero_equation(4);
  bad.K_DD = KernelSpec::table(Eigen::VectorXd::Constant(4, 0.01));
  bad.K_NN = KernelSpec::table(Eigen::VectorXd::Constant(4, 0.01));
  bad.K_ND = KernelSpec::table(Eigen::VectorXd::Constant(4, 0.30));
  const PositivityReport brep = check_positivity(bad, Side::night);
  CHECK(!brep.double_kernel.pass);
  CHECK(brep.min_eigenvalue_K < -1e-6);
}

TEST_CASE("affine bound matches the bordered spectrum") {
  Rng rng(2026, 9);
  for (int rep_i = 0; rep_i < 40; ++rep_i) {
    const long q = 1 + long(rng.uniform(0.0, 6.0));
    EquationParams eq = zero_equation(q);
    eq.K_DD = KernelSpec::table(random_table(rng, q, 0.05, 0.35));
    eq.K_NN = KernelSpec::table(random_table(rng, q, 0.05, 0.35));
    eq.K_ND = KernelSpec::table(random_table(rng, q, -0.03, 0.03));
    eq.K_DN = KernelSpec::table(random_table(rng, q, -0.03, 0.03));
    Eigen::VectorXd ld = random_table(rng, q, 0.05, 0.30);
    Eigen::VectorXd ln = random_table(rng, q, 0.05, 0.30);
    if (rep_i % 2 == 0) ld = -ld;
    if (rep_i % 3 == 0) ln = -ln;
    eq.L_D = KernelSpec::table(ld);
    eq.L_N = KernelSpec::table(ln);
    const Side side = rep_i % 2 == 0 ? Side::day : Side::night;

    // Probe the affine mass, then place the baseline strictly on one
    // side of the boundary.
    eq.s2 = 1.0;
    const LeveragePositivity probe = check_positivity_leverage(eq, side);
    REQUIRE(probe.applicable);
    REQUIRE(probe.value > 0.0);
    static const double kMultipliers[] = {0.4, 0.7, 1.5, 2.5};
    const double mult = kMultipliers[rep_i % 4];
    eq.s2 = probe.value / 4.0 * mult;

    const PositivityReport rep = check_positivity(eq, side);
    REQUIRE(rep.leverage.applicable);
    CHECK(rep.leverage.bound == doctest::Approx(4.0 * eq.s2));
    CHECK(rep.leverage.pass == (mult >= 1.0));
    REQUIRE(rep.min_eigenvalue_K > 0.0);
    CHECK(rep.leverage.pass == (rep.min_eigenvalue_M >= -1e-10));
  }
}

TEST_CASE("inert coordinates deflate or fail") {
  const long q = 4;
  EquationParams eq = zero_equation(q);
  Eigen::VectorXd dd(q);
  dd << 0.10, 0.0, 0.10, 0.10;  // lag 2 carries no quadratic weight
  eq.K_DD = KernelSpec::table(dd);
  eq.K_NN = KernelSpec::table(Eigen::VectorXd::Constant(q, 0.08));
  Eigen::VectorXd ld = Eigen::VectorXd::Constant(q, 0.05);
  ld(1) = 0.0;
  eq.L_D = KernelSpec::table(ld);
  eq.s2 = 0.5;

  const LeveragePositivity clean = check_positivity_leverage(eq, Side::night);
  CHECK(clean.applicable);
  CHECK(clean.deflated == 1);
  CHECK(clean.pass);
  CHECK(std::isfinite(clean.value));

  // Leverage on the dead coordinate makes the affine form unbounded.
  ld(1) = 0.05;
  eq.L_D = KernelSpec::table(ld);
  const LeveragePositivity dirty = check_positivity_leverage(eq, Side::night);
  CHECK(!dirty.pass);
  CHECK(std::isinf(dirty.value));
}

TEST_CASE("horizon rebase keeps the unit budget") {
  const long native_q = 64;
  EquationParams eq;
  eq.s2 = 0.31;
  eq.nu = 7.0;
  eq.K_DD = KernelSpec::power_law(0.08, 0.7, 0.01, native_q);
  eq.K_NN = KernelSpec::power_law(0.05, 1.1, 0.02, native_q);
  eq.K_ND = KernelSpec::power_law(0.015, 1.0, 0.013, native_q);
  eq.K_DN = KernelSpec::power_law(-0.012, 1.2, 0.03, native_q);
  eq.L_D = KernelSpec::exponential(-0.05, 0.18, native_q);
  eq.L_N = KernelSpec::exponential(-0.028, 0.22, native_q);
  const double m_nd = -0.02, m_dn = -0.01;

  const EquationParams same =
      at_horizon(eq, native_q, native_q, m_nd, m_dn, Side::day);
  CHECK(same.s2 == eq.s2);
  CHECK(same.q() == native_q);

  for (long q : {32L, 96L}) {
    for (Side side : {Side::day, Side::night}) {
      const EquationParams out =
          at_horizon(eq, q, native_q, m_nd, m_dn, side);
      REQUIRE(out.q() == q);
      const PositionWeights w = assemble_positions(out, side);
      const double budget = out.s2 + w.c_dd.sum() + w.c_nn.sum() +
                            2.0 * m_nd * w.c_nd.sum() +
                            2.0 * m_dn * w.c_dn.sum();
      CHECK(budget == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("upper-bound rates touch only the quadratic kernels") {
  EquationParams eq;
  eq.s2 = 0.2;
  eq.nu = 6.0;
  eq.K_DD = KernelSpec::power_law(0.08, 0.7, 0.010, 32);
  eq.K_NN = KernelSpec::power_law(0.05, 1.1, 0.020, 32);
  eq.K_ND = KernelSpec::power_law(0.015, 1.0, 0.013, 32);
  eq.K_DN = KernelSpec::power_law(-0.012, 1.2, 0.030, 32);
  eq.L_D = KernelSpec::exponential(-0.05, 0.18, 32);
  eq.L_N = KernelSpec::exponential(-0.028, 0.22, 32);
  eq.K_DD.omega_err = 0.004;
  eq.K_NN.omega_err = 0.007;
  eq.K_ND.omega_err = 0.002;
  eq.K_DN.omega_err = 0.050;
  eq.L_D.omega_err = 0.030;
  eq.L_N.omega_err = 0.040;

  const EquationParams out = with_omega_upper_bounds(eq);
  CHECK(out.K_DD.omega == eq.K_DD.omega + 0.004);
  CHECK(out.K_NN.omega == eq.K_NN.omega + 0.007);
  CHECK(out.K_ND.omega == eq.K_ND.omega + 0.002);
  CHECK(out.K_DN.omega == eq.K_DN.omega + 0.050);
  CHECK(out.L_D.omega == eq.L_D.omega);
  CHECK(out.L_N.omega == eq.L_N.omega);
  CHECK(out.K_DD.g == eq.K_DD.g);
  CHECK(out.K_DD.alpha == eq.K_DD.alpha);
  CHECK(out.s2 == eq.s2);
  CHECK(out.nu == eq.nu);
}

TEST_CASE("published model at the shorter horizon passes both criteria") {
  const BivariateModel model =
      read_bivariate_model(source_dir() + "/data/params_us_day.json",
                           source_dir() + "/data/params_us_night.json");
  const long q = 126;
  EquationParams day = with_omega_upper_bounds(model.day);
  EquationParams night = with_omega_upper_bounds(model.night);
  day = at_horizon(day, q, model.q, model.cross_moment,
                   model.cross_moment_leading, Side::day);
  night = at_horizon(night, q, model.q, model.cross_moment,
                     model.cross_moment_leading, Side::night);

  const PositivityReport pd = check_positivity(day, Side::day);
  const PositivityReport pn = check_positivity(night, Side::night);
  CHECK(pd.overall);
  CHECK(pn.overall);
  CHECK(pd.double_kernel.margin == doctest::Approx(1.99663).epsilon(1e-4));
  CHECK(pn.double_kernel.margin == doctest::Approx(7.91028).epsilon(1e-4));
  CHECK(pd.min_eigenvalue_K >= -1e-10);
  CHECK(pn.min_eigenvalue_K >= -1e-10);
  CHECK(pd.min_eigenvalue_M >= -1e-10);
  CHECK(pn.min_eigenvalue_M >= -1e-10);

  // At the native horizon the sufficient criterion loses the day side:
  // the split budget tightens past one even though the exact spectrum
  // stays marginally positive.
  const EquationParams day512 = with_omega_upper_bounds(model.day);
  const EquationParams night512 = with_omega_upper_bounds(model.night);
  const DoublePositivity d512 = check_positivity_double(
      at_horizon(day512, 512, model.q, model.cross_moment,
                 model.cross_moment_leading, Side::day),
      Side::day);
  const DoublePositivity n512 = check_positivity_double(
      at_horizon(night512, 512, model.q, model.cross_moment,
                 model.cross_moment_leading, Side::night),
      Side::night);
  CHECK(!d512.pass);
  CHECK(d512.tightness > 1.0);
  CHECK(!n512.pass);
  CHECK(n512.margin == doctest::Approx(0.0242511).epsilon(1e-4));
}

TEST_CASE("long simulation stays positive") {
  const BivariateModel model = diagonal_model(24);
  const EmpiricalPositivity rep = empirical_positivity(model, 4, 2000, 99);
  CHECK(rep.stock_days == 8000);
  CHECK(rep.negative_count == 0);
  CHECK(rep.min_sigma2_d > 0.0);
  CHECK(rep.min_sigma2_n > 0.0);
  CHECK(rep.burnin_floored == 0);
}
