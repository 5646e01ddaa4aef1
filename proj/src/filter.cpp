#include "onarch/filter.hpp"

#include <cmath>
#include <limits>

#include "onarch/errors.hpp"
#include "onarch/threads.hpp"

namespace onarch {

double eval_kernel_extended(const KernelSpec& spec, long tau) {
  if (tau <= spec.q) return eval_kernel(spec, tau);
  if (spec.shape == KernelSpec::Shape::free) return 0.0;
  KernelSpec extended = spec;
  extended.q = tau;
  return eval_kernel(extended, tau);
}

PositionWeights assemble_positions(const EquationParams& params, Side side) {
  const long q = params.q();
  PositionWeights w;
  w.q = q;
  w.c_dd = Eigen::VectorXd::Zero(q + 1);
  w.c_nn = Eigen::VectorXd::Zero(q + 1);
  w.c_nd = Eigen::VectorXd::Zero(q + 1);
  w.c_dn = Eigen::VectorXd::Zero(q + 1);
  w.l_d = Eigen::VectorXd::Zero(q + 1);
  w.l_n = Eigen::VectorXd::Zero(q + 1);

  for (long a = 1; a <= q; ++a) {
    w.c_dd(a) = eval_kernel(params.K_DD, a);
    w.c_nd(a) = eval_kernel(params.K_ND, a);
    w.l_d(a) = eval_kernel(params.L_D, a);
  }
  if (side == Side::day) {
    // Same-date overnight enters at position 0, so overnight kernel
    // arguments run 1..q+1 across positions 0..q.
    for (long j = 0; j <= q; ++j) {
      w.c_nn(j) = eval_kernel_extended(params.K_NN, j + 1);
      w.l_n(j) = eval_kernel_extended(params.L_N, j + 1);
    }
    for (long a = 1; a <= q; ++a) w.c_dn(a) = eval_kernel(params.K_DN, a);
  } else {
    for (long j = 1; j <= q; ++j) {
      w.c_nn(j) = eval_kernel(params.K_NN, j);
      w.l_n(j) = eval_kernel(params.L_N, j);
    }
    // rd_{t-a} pairs with rn_{t-a+1}; the night sum starts one pair
    // later, so argument 1 sits at position 2 and the last argument
    // inside the horizon is q - 1.
    for (long a = 2; a <= q; ++a) w.c_dn(a) = eval_kernel(params.K_DN, a - 1);
  }
  return w;
}

DailyPositionWeights assemble_positions(const DailyArchParams& params) {
  const long q = params.q();
  DailyPositionWeights w;
  w.q = q;
  w.k = Eigen::VectorXd::Zero(q + 1);
  w.l = Eigen::VectorXd::Zero(q + 1);
  for (long a = 1; a <= q; ++a) {
    w.k(a) = eval_kernel(params.K, a);
    w.l(a) = eval_kernel(params.L, a);
  }
  return w;
}

namespace {

// Reversed weights: rev[k] = c[q - k], so that
// sum_a c[a] x[t-a] = rev . x[t-q .. t].
Eigen::VectorXd reverse_weights(const Eigen::VectorXd& c) {
  return c.reverse();
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

} // namespace

Eigen::VectorXd filter_series(const PositionWeights& w, double s2,
                              const Eigen::VectorXd& rd,
                              const Eigen::VectorXd& rn) {
  const long T = rd.size(), q = w.q;
  if (rn.size() != T) throw DataError("mismatched series lengths");
  if (T < q + 1)
    throw DataError("history of length " + std::to_string(T) +
                    " cannot feed a filter with q = " + std::to_string(q));

  const Eigen::VectorXd rd2 = rd.array().square();
  const Eigen::VectorXd rn2 = rn.array().square();
  const Eigen::VectorXd prod_nd = rd.array() * rn.array();
  Eigen::VectorXd prod_dn = Eigen::VectorXd::Zero(T);
  prod_dn.head(T - 1) =
      rd.head(T - 1).array() * rn.tail(T - 1).array();  // rd_i * rn_{i+1}

  const Eigen::VectorXd v_dd = reverse_weights(w.c_dd);
  const Eigen::VectorXd v_nn = reverse_weights(w.c_nn);
  const Eigen::VectorXd v_nd = reverse_weights(w.c_nd);
  const Eigen::VectorXd v_dn = reverse_weights(w.c_dn);
  const Eigen::VectorXd v_ld = reverse_weights(w.l_d);
  const Eigen::VectorXd v_ln = reverse_weights(w.l_n);

  Eigen::VectorXd sigma2 = Eigen::VectorXd::Constant(T, kNaN);
  for (long t = q; t < T; ++t) {
    const long lo = t - q, n = q + 1;
    sigma2(t) = s2 + v_dd.dot(rd2.segment(lo, n)) +
                v_nn.dot(rn2.segment(lo, n)) +
                2.0 * v_nd.dot(prod_nd.segment(lo, n)) +
                2.0 * v_dn.dot(prod_dn.segment(lo, n)) +
                v_ld.dot(rd.segment(lo, n)) + v_ln.dot(rn.segment(lo, n));
  }
  return sigma2;
}

namespace {

FilterResult finish_filter(Eigen::MatrixXd sigma2, long warmup) {
  FilterResult out;
  out.warmup = warmup;
  out.min_sigma2 = std::numeric_limits<double>::infinity();
  for (Eigen::Index s = 0; s < sigma2.cols(); ++s)
    for (Eigen::Index t = warmup; t < sigma2.rows(); ++t) {
      if (sigma2(t, s) < 0.0) ++out.negative_count;
      out.min_sigma2 = std::min(out.min_sigma2, sigma2(t, s));
    }
  out.sigma2 = std::move(sigma2);
  return out;
}

} // namespace

FilterResult filter_equation(const EquationParams& params, Side side,
                             const ReturnPanel& panel) {
  const PositionWeights w = assemble_positions(params, side);
  const long T = panel.n_dates(), N = panel.n_stocks();
  Eigen::MatrixXd sigma2(T, N);
  parallel_over(N, [&](long s) {
    sigma2.col(s) = filter_series(w, params.s2, panel.rd.col(s),
                                  panel.rn.col(s));
  });
  return finish_filter(std::move(sigma2), w.q);
}

BivariateFilterResult filter_volatility(const BivariateModel& model,
                                        const ReturnPanel& panel) {
  BivariateFilterResult out;
  out.day = filter_equation(model.day, Side::day, panel);
  out.night = filter_equation(model.night, Side::night, panel);
  return out;
}

PositionWeights daily_position_weights(const DailyArchParams& params) {
  const DailyPositionWeights dw = assemble_positions(params);
  PositionWeights w;
  w.q = dw.q;
  w.c_dd = dw.k;
  w.l_d = dw.l;
  w.c_nn = Eigen::VectorXd::Zero(dw.q + 1);
  w.c_nd = w.c_nn;
  w.c_dn = w.c_nn;
  w.l_n = w.c_nn;
  return w;
}

FilterResult filter_daily_arch(const DailyArchParams& params,
                               const ReturnPanel& panel) {
  const PositionWeights w = daily_position_weights(params);
  const long T = panel.n_dates(), N = panel.n_stocks();
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(T);
  Eigen::MatrixXd sigma2(T, N);
  parallel_over(N, [&](long s) {
    sigma2.col(s) = filter_series(w, params.s2, panel.r.col(s), zero);
  });
  return finish_filter(std::move(sigma2), w.q);
}

} // namespace onarch
