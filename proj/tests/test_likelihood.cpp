#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <stdexcept>

#include "onarch/filter.hpp"
#include "onarch/kernels.hpp"
#include "onarch/likelihood.hpp"
#include "onarch/model.hpp"
#include "onarch/returns.hpp"
#include "onarch/threads.hpp"

using namespace onarch;

namespace {

EquationParams dense_equation(long q) {
  EquationParams eq;
  eq.s2 = 0.31;
  eq.nu = 7.0;
  eq.K_DD = KernelSpec::power_law(0.08, 0.7, 0.01, q);
  eq.K_NN = KernelSpec::power_law(0.05, 1.1, 0.02, q);
  eq.K_ND = KernelSpec::power_law(0.015, 1.0, 0.013, q);
  eq.K_DN = KernelSpec::power_law(-0.012, 1.2, 0.03, q);
  eq.L_D = KernelSpec::exponential(-0.05, 0.18, q);
  eq.L_N = KernelSpec::exponential(-0.028, 0.22, q);
  return eq;
}

ReturnPanel toy_panel(int T, int S, unsigned seed) {
  ReturnPanel p;
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  p.dates.resize(T);
  for (int t = 0; t < T; ++t) p.dates[size_t(t)] = 19000 + t;
  p.rd.resize(T, S);
  p.rn.resize(T, S);
  p.r.resize(T, S);
  p.valid_d = MaskMatrix::Ones(T, S);
  p.valid_n = MaskMatrix::Ones(T, S);
  p.valid_r = MaskMatrix::Ones(T, S);
  for (int s = 0; s < S; ++s) {
    p.tickers.push_back("S" + std::to_string(s));
    for (int t = 0; t < T; ++t) {
      p.rd(t, s) = 0.9 * g(gen);
      p.rn(t, s) = 0.5 * g(gen);
      p.r(t, s) = p.rd(t, s) + p.rn(t, s);
    }
  }
  return p;
}

// Composite Simpson over the compactified axis r = scale tan(u); the
// integrand vanishes smoothly at the endpoints for nu > 2.
double density_mass(double sigma2, double nu) {
  const double scale = std::sqrt(sigma2);
  const long n = 4096;
  const double a = -1.5707963267948966, b = 1.5707963267948966;
  const double h = (b - a) / double(n);
  auto f = [&](double u) {
    const double c = std::cos(u);
    if (c < 1e-12) return 0.0;
    const double r = scale * std::tan(u);
    return std::exp(student_loglik(sigma2, r, nu)) * scale / (c * c);
  };
  double sum = f(a) + f(b);
  for (long i = 1; i < n; ++i)
    sum += f(a + h * double(i)) * (i % 2 == 1 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

} // namespace

TEST_CASE("log density reference values and scale family") {
  // At the center, sigma2 = 1: values frozen from 40-digit arithmetic.
  CHECK(student_loglik(1.0, 0.0, 3.61) ==
        doctest::Approx(-0.5836358878718314).epsilon(1e-14));
  CHECK(student_loglik(1.0, 0.0, 13.5) ==
        doctest::Approx(-0.8572689013023083).epsilon(1e-14));

  // Student scale family: l(s2, r) = l(1, r/s) - ln s.
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> us(0.1, 5.0), ur(-4.0, 4.0),
      un(2.3, 40.0);
  for (int i = 0; i < 200; ++i) {
    const double s2 = us(gen), r = ur(gen), nu = un(gen);
    const double direct = student_loglik(s2, r, nu);
    const double scaled =
        student_loglik(1.0, r / std::sqrt(s2), nu) - 0.5 * std::log(s2);
    CHECK(direct == doctest::Approx(scaled).epsilon(1e-12));
  }
}

TEST_CASE("full density is the reduced form plus the constant") {
  std::mt19937_64 gen(4);
  std::uniform_real_distribution<double> us(0.2, 3.0), ur(-3.0, 3.0),
      un(2.5, 30.0);
  for (int i = 0; i < 100; ++i) {
    const double s2 = us(gen), r = ur(gen), nu = un(gen);
    CHECK(student_loglik(s2, r, nu) ==
          doctest::Approx(student_loglik_eq7(s2, r, nu) +
                          student_constant(nu))
              .epsilon(1e-13));
  }
}

TEST_CASE("density rejects tails at or below two") {
  CHECK_THROWS_AS(student_loglik(1.0, 0.5, 2.0), std::domain_error);
  CHECK_THROWS_AS(student_loglik(1.0, 0.5, 1.2), std::domain_error);
  CHECK_THROWS_AS(student_constant(2.0), std::domain_error);
  CHECK_THROWS_AS(student_derivs(1.0, 0.5, 2.0), std::domain_error);
}

TEST_CASE("density integrates to one") {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> us(0.05, 4.0), un(2.4, 50.0);
  for (int i = 0; i < 10; ++i) {
    const double s2 = us(gen), nu = un(gen);
    CHECK(std::abs(density_mass(s2, nu) - 1.0) < 1e-10);
  }
}

TEST_CASE("derivatives match finite differences") {
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<double> us(0.3, 3.0), ur(-3.0, 3.0),
      un(2.6, 25.0);
  for (int i = 0; i < 50; ++i) {
    const double s2 = us(gen), r = ur(gen), nu = un(gen);
    const StudentDerivs d = student_derivs(s2, r, nu);
    CHECK(d.l == doctest::Approx(student_loglik(s2, r, nu)).epsilon(1e-13));

    const double hs = 1e-6 * s2, hn = 1e-6 * nu;
    const double fd_ds =
        (student_loglik(s2 + hs, r, nu) - student_loglik(s2 - hs, r, nu)) /
        (2 * hs);
    const double fd_dnu =
        (student_loglik(s2, r, nu + hn) - student_loglik(s2, r, nu - hn)) /
        (2 * hn);
    CHECK(d.ds == doctest::Approx(fd_ds).epsilon(1e-6));
    CHECK(d.dnu == doctest::Approx(fd_dnu).epsilon(1e-5));

    const double fd_dss =
        (student_derivs(s2 + hs, r, nu).ds -
         student_derivs(s2 - hs, r, nu).ds) / (2 * hs);
    const double fd_dsnu =
        (student_derivs(s2, r, nu + hn).ds -
         student_derivs(s2, r, nu - hn).ds) / (2 * hn);
    const double fd_dnunu =
        (student_derivs(s2, r, nu + hn).dnu -
         student_derivs(s2, r, nu - hn).dnu) / (2 * hn);
    CHECK(d.dss == doctest::Approx(fd_dss).epsilon(1e-5));
    CHECK(d.dsnu == doctest::Approx(fd_dsnu).epsilon(1e-5));
    CHECK(d.dnunu == doctest::Approx(fd_dnunu).epsilon(1e-4));
  }
}

TEST_CASE("target data routes the three layouts") {
  const ReturnPanel p = toy_panel(50, 2, 7);
  const TargetData day = make_target_data(p, Target::day);
  CHECK((day.target_r - p.rd).cwiseAbs().maxCoeff() == 0.0);
  CHECK((day.rd - p.rd).cwiseAbs().maxCoeff() == 0.0);
  const TargetData night = make_target_data(p, Target::night);
  CHECK((night.target_r - p.rn).cwiseAbs().maxCoeff() == 0.0);
  const TargetData daily = make_target_data(p, Target::daily);
  CHECK((daily.rd - p.r).cwiseAbs().maxCoeff() == 0.0);
  CHECK(daily.rn.cwiseAbs().maxCoeff() == 0.0);
  CHECK((daily.target_r - p.r).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("panel likelihood counts points and stays valid") {
  const long q = 6, T = 60, S = 3;
  const EquationParams eq = dense_equation(q);
  const ReturnPanel p = toy_panel(T, S, 8);
  const LikelihoodReport rep = panel_loglik(eq, Side::day, p);
  CHECK(rep.valid);
  CHECK(rep.n_points == (T - q) * S);
  CHECK(rep.negative_variance_count == 0);
  CHECK(rep.loglik_per_point ==
        doctest::Approx(rep.loglik_per_point_eq7 + student_constant(eq.nu))
            .epsilon(1e-12));
  CHECK(rep.loglik_per_point < 0.0);
}

TEST_CASE("rescaling data and model shifts the likelihood by -ln lambda") {
  const long q = 5, T = 80, S = 2;
  const EquationParams eq = dense_equation(q);
  const ReturnPanel p = toy_panel(T, S, 9);

  const double lambda = 1.7;
  EquationParams scaled = eq;
  scaled.s2 = eq.s2 * lambda * lambda;
  scaled.L_D = KernelSpec::exponential(eq.L_D.g * lambda, eq.L_D.omega, q);
  scaled.L_N = KernelSpec::exponential(eq.L_N.g * lambda, eq.L_N.omega, q);
  ReturnPanel ps = p;
  ps.rd *= lambda;
  ps.rn *= lambda;
  ps.r *= lambda;

  for (Side side : {Side::day, Side::night}) {
    const LikelihoodReport base = panel_loglik(eq, side, p);
    const LikelihoodReport shift = panel_loglik(scaled, side, ps);
    CHECK(shift.loglik_per_point ==
          doctest::Approx(base.loglik_per_point - std::log(lambda))
              .epsilon(1e-12));
  }
}

TEST_CASE("negative filter variances invalidate the report") {
  EquationParams eq = dense_equation(4);
  eq.s2 = 1e-4;
  eq.L_D = KernelSpec::exponential(-2.0, 0.05, 4);
  const ReturnPanel p = toy_panel(60, 2, 10);
  const LikelihoodReport rep = panel_loglik(eq, Side::day, p);
  CHECK_FALSE(rep.valid);
  CHECK(rep.negative_variance_count > 0);
}

TEST_CASE("panel pass gradient matches finite differences") {
  const long q = 5, T = 90, S = 2;
  const ReturnPanel p = toy_panel(T, S, 11);
  std::mt19937_64 gen(12);
  std::uniform_real_distribution<double> u(-0.01, 0.02);

  for (Target target : {Target::day, Target::night, Target::daily}) {
    const TargetData data = make_target_data(p, target);
    PositionWeights w;
    w.q = q;
    for (auto* v : {&w.c_dd, &w.c_nn, &w.c_nd, &w.c_dn, &w.l_d, &w.l_n}) {
      v->resize(q + 1);
      for (long a = 0; a <= q; ++a) (*v)(a) = u(gen);
    }
    const double s2 = 1.1, nu = 6.5;

    const PanelPass pass = panel_pass(w, s2, nu, data, PassLevel::gradient);
    REQUIRE(pass.negative_count == 0);

    auto value = [&](const PositionWeights& ww, double ss2, double nnu) {
      return panel_pass(ww, ss2, nnu, data, PassLevel::value).sum_loglik;
    };

    const double h = 1e-6;
    for (int ch = 0; ch < kChannels; ++ch)
      for (long a = 0; a <= q; ++a) {
        PositionWeights wp = w, wm = w;
        auto& vp = (ch == 0   ? wp.c_dd
                    : ch == 1 ? wp.c_nn
                    : ch == 2 ? wp.c_nd
                    : ch == 3 ? wp.c_dn
                    : ch == 4 ? wp.l_d
                              : wp.l_n);
        auto& vm = (ch == 0   ? wm.c_dd
                    : ch == 1 ? wm.c_nn
                    : ch == 2 ? wm.c_nd
                    : ch == 3 ? wm.c_dn
                    : ch == 4 ? wm.l_d
                              : wm.l_n);
        vp(a) += h;
        vm(a) -= h;
        const double fd = (value(wp, s2, nu) - value(wm, s2, nu)) / (2 * h);
        CHECK(pass.adj[ch](a) ==
              doctest::Approx(fd).epsilon(1e-5).scale(1.0));
      }

    const double fd_s2 =
        (value(w, s2 + 1e-7, nu) - value(w, s2 - 1e-7, nu)) / 2e-7;
    const double fd_nu =
        (value(w, s2, nu + 1e-6) - value(w, s2, nu - 1e-6)) / 2e-6;
    CHECK(pass.sum_f1 == doctest::Approx(fd_s2).epsilon(1e-6));
    CHECK(pass.sum_dnu == doctest::Approx(fd_nu).epsilon(1e-5));
  }
}

TEST_CASE("panel pass hessian blocks match finite differences") {
  const long q = 4, T = 70, S = 2;
  const ReturnPanel p = toy_panel(T, S, 13);
  const TargetData data = make_target_data(p, Target::day);

  PositionWeights w;
  w.q = q;
  std::mt19937_64 gen(14);
  std::uniform_real_distribution<double> u(-0.01, 0.02);
  for (auto* v : {&w.c_dd, &w.c_nn, &w.c_nd, &w.c_dn, &w.l_d, &w.l_n}) {
    v->resize(q + 1);
    for (long a = 0; a <= q; ++a) (*v)(a) = u(gen);
  }
  const double s2 = 1.2, nu = 8.0;

  // Three live columns: one per representative channel.
  std::vector<JacobianColumn> jac(3);
  jac[0].channel = kDD;
  jac[1].channel = kLD;
  jac[2].channel = kNN;
  std::mt19937_64 gen2(15);
  for (auto& col : jac) {
    col.weights.resize(q + 1);
    for (long a = 0; a <= q; ++a) col.weights(a) = u(gen2);
  }

  const PanelPass pass =
      panel_pass(w, s2, nu, data, PassLevel::hessian, jac);
  const long pj = long(jac.size());
  REQUIRE(pass.h_jj.rows() == pj + 1);
  CHECK((pass.h_jj - pass.h_jj.transpose()).cwiseAbs().maxCoeff() < 1e-12);

  // Directional check: moving the weights along column i changes the
  // adjoint projection onto column j with curvature h_jj(i, j), exactly
  // like a dense Hessian restricted to the column span.
  auto grad_proj = [&](const PositionWeights& ww, long j) {
    const PanelPass g = panel_pass(ww, s2, nu, data, PassLevel::gradient);
    return g.adj[jac[size_t(j)].channel].dot(jac[size_t(j)].weights);
  };
  const double h = 1e-6;
  for (long i = 0; i < pj; ++i) {
    PositionWeights wp = w, wm = w;
    auto pick = [&](PositionWeights& x) -> Eigen::VectorXd& {
      switch (jac[size_t(i)].channel) {
        case kDD: return x.c_dd;
        case kNN: return x.c_nn;
        case kND: return x.c_nd;
        case kDN: return x.c_dn;
        case kLD: return x.l_d;
        default: return x.l_n;
      }
    };
    pick(wp) += h * jac[size_t(i)].weights;
    pick(wm) -= h * jac[size_t(i)].weights;
    for (long j = 0; j < pj; ++j) {
      const double fd = (grad_proj(wp, j) - grad_proj(wm, j)) / (2 * h);
      CHECK(pass.h_jj(i, j) ==
            doctest::Approx(fd).epsilon(2e-4).scale(1.0));
    }
    // Border row: the s2 slot.
    const PanelPass gp = panel_pass(wp, s2, nu, data, PassLevel::gradient);
    const PanelPass gm = panel_pass(wm, s2, nu, data, PassLevel::gradient);
    const double fd_s2 = (gp.sum_f1 - gm.sum_f1) / (2 * h);
    CHECK(pass.h_jj(i, pj) ==
          doctest::Approx(fd_s2).epsilon(2e-4).scale(1.0));
    const double fd_nu = (gp.sum_dnu - gm.sum_dnu) / (2 * h);
    CHECK(pass.h_jnu(i) == doctest::Approx(fd_nu).epsilon(2e-4).scale(1.0));
  }
}

TEST_CASE("stock-major reduction is independent of the thread count") {
  const long q = 8, T = 300, S = 7;
  const EquationParams eq = dense_equation(q);
  const ReturnPanel p = toy_panel(T, S, 16);

  set_thread_count(1);
  const LikelihoodReport one = panel_loglik(eq, Side::day, p);
  set_thread_count(8);
  const LikelihoodReport eight = panel_loglik(eq, Side::day, p);
  set_thread_count(3);
  const LikelihoodReport three = panel_loglik(eq, Side::night, p);
  set_thread_count(1);
  const LikelihoodReport again = panel_loglik(eq, Side::night, p);
  set_thread_count(0);

  // Bitwise equality, not approximate: the reduction order is fixed.
  CHECK(one.loglik_per_point == eight.loglik_per_point);
  CHECK(one.loglik_per_point_eq7 == eight.loglik_per_point_eq7);
  CHECK(three.loglik_per_point == again.loglik_per_point);
}
