#include "onarch/simulate.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "onarch/errors.hpp"
#include "onarch/filter.hpp"
#include "onarch/rng.hpp"
#include "onarch/threads.hpp"
#include "onarch/validity.hpp"

namespace onarch {

Eigen::VectorXd sample_student(double nu, long n, std::uint64_t seed) {
  if (nu <= 2.0) throw NumericalError("Student nu must exceed 2");
  Rng rng(seed);
  Eigen::VectorXd x(n);
  for (long i = 0; i < n; ++i) x(i) = rng.student_unit(nu);
  return x;
}

namespace {

// Weekday-only synthetic calendar; the base date is a Monday.
std::vector<DayCount> synthetic_calendar(long n) {
  std::vector<DayCount> dates;
  dates.reserve(n);
  DayCount d = days_from_civil(2000, 1, 3);
  while (long(dates.size()) < n) {
    if (weekday(d) < 5) dates.push_back(d);
    ++d;
  }
  return dates;
}

std::string stock_name(long s) {
  std::string name = "S";
  std::string num = std::to_string(s);
  name.append(4 - std::min<std::size_t>(4, num.size()), '0');
  return name + num;
}

struct StockOutcome {
  long burnin_floored = 0;
  long negative_count = 0;
  double min_d = std::numeric_limits<double>::infinity();
  double min_n = std::numeric_limits<double>::infinity();
  long first_negative_t = -1;
  double first_negative_value = 0.0;
};

// One channel's moving dot product: sum_a w[a] x[t-a] for positions
// 0..q evaluated as a reversed-weight window dot.
struct Window {
  Eigen::VectorXd rev;  // rev[k] = w[q - k]
  long q;
  explicit Window(const Eigen::VectorXd& w) : rev(w.reverse()), q(w.size() - 1) {}
  double at(const Eigen::VectorXd& x, long t) const {
    return rev.dot(x.segment(t - q, q + 1));
  }
};

} // namespace

SimResult simulate_panel(const BivariateModel& model,
                         const SimConfig& config) {
  if (config.horizon < 1) throw UsageError("simulation horizon must be >= 1");
  if (config.n_stocks < 1) throw UsageError("need at least one stock");
  if (!config.force) {
    const StabilityReport stability = check_stability(model);
    if (!stability.stable)
      throw NumericalError(
          "model is unstable (spectral radius " +
          std::to_string(std::max(std::abs(stability.lambda1),
                                  std::abs(stability.lambda2))) +
          "); pass force to simulate anyway");
  }

  const long q = model.q;
  const long burn = config.burn_in >= 0 ? config.burn_in
                                        : std::max(10 * q, 5000L);
  const long T = config.horizon, N = config.n_stocks;
  const long total = q + burn + T;  // leading q slots hold the zero history

  const PositionWeights wd = assemble_positions(model.day, Side::day);
  const PositionWeights wn = assemble_positions(model.night, Side::night);
  const Window d_dd(wd.c_dd), d_nn(wd.c_nn), d_nd(wd.c_nd), d_dn(wd.c_dn),
      d_ld(wd.l_d), d_ln(wd.l_n);
  const Window n_dd(wn.c_dd), n_nn(wn.c_nn), n_nd(wn.c_nd), n_dn(wn.c_dn),
      n_ld(wn.l_d), n_ln(wn.l_n);

  ReturnPanel panel;
  panel.dates = synthetic_calendar(T);
  panel.rd = Eigen::MatrixXd::Zero(T, N);
  panel.rn = Eigen::MatrixXd::Zero(T, N);
  panel.r = Eigen::MatrixXd::Zero(T, N);
  panel.valid_d = MaskMatrix::Ones(T, N);
  panel.valid_n = MaskMatrix::Ones(T, N);
  panel.valid_r = MaskMatrix::Ones(T, N);
  for (long s = 0; s < N; ++s) panel.tickers.push_back(stock_name(s));

  std::vector<StockOutcome> outcomes(N);
  parallel_over(N, [&](long s) {
    Rng rng(config.seed, std::uint64_t(s));
    StockOutcome& oc = outcomes[s];
    Eigen::VectorXd rd = Eigen::VectorXd::Zero(total);
    Eigen::VectorXd rn = Eigen::VectorXd::Zero(total);
    Eigen::VectorXd rd2 = rd, rn2 = rd, prod_nd = rd, prod_dn = rd;

    for (long t = q; t < total; ++t) {
      const bool emitted = t >= q + burn;
      auto settle = [&](double sigma2, double& min_slot) -> double {
        if (emitted) min_slot = std::min(min_slot, sigma2);
        if (sigma2 >= 0.0) return sigma2;
        if (!emitted) {
          ++oc.burnin_floored;
          return 0.0;
        }
        ++oc.negative_count;
        if (oc.first_negative_t < 0) {
          oc.first_negative_t = t - q - burn;
          oc.first_negative_value = sigma2;
        }
        return 0.0;
      };

      const double sig2n =
          settle(model.night.s2 + n_dd.at(rd2, t) + n_nn.at(rn2, t) +
                     2.0 * n_nd.at(prod_nd, t) + 2.0 * n_dn.at(prod_dn, t) +
                     n_ld.at(rd, t) + n_ln.at(rn, t),
                 oc.min_n);
      rn(t) = std::sqrt(sig2n) * rng.student_unit(model.night.nu);
      rn2(t) = rn(t) * rn(t);
      prod_dn(t - 1) = rd(t - 1) * rn(t);

      const double sig2d =
          settle(model.day.s2 + d_dd.at(rd2, t) + d_nn.at(rn2, t) +
                     2.0 * d_nd.at(prod_nd, t) + 2.0 * d_dn.at(prod_dn, t) +
                     d_ld.at(rd, t) + d_ln.at(rn, t),
                 oc.min_d);
      rd(t) = std::sqrt(sig2d) * rng.student_unit(model.day.nu);
      rd2(t) = rd(t) * rd(t);
      prod_nd(t) = rd(t) * rn(t);
    }

    panel.rd.col(s) = rd.tail(T);
    panel.rn.col(s) = rn.tail(T);
    panel.r.col(s) = (rd + rn).tail(T);
  });

  SimResult result;
  result.min_sigma2_d = std::numeric_limits<double>::infinity();
  result.min_sigma2_n = std::numeric_limits<double>::infinity();
  for (long s = 0; s < N; ++s) {
    const StockOutcome& oc = outcomes[s];
    if (config.abort_on_negative && oc.negative_count > 0)
      throw NumericalError(
          "negative variance " + std::to_string(oc.first_negative_value) +
          " at emitted date " + std::to_string(oc.first_negative_t) +
          " of stock " + stock_name(s));
    result.burnin_floored += oc.burnin_floored;
    result.negative_count += oc.negative_count;
    result.min_sigma2_d = std::min(result.min_sigma2_d, oc.min_d);
    result.min_sigma2_n = std::min(result.min_sigma2_n, oc.min_n);
  }
  result.panel = std::move(panel);
  return result;
}

SimResult simulate_panel(const DailyArchParams& params,
                         const SimConfig& config) {
  if (config.horizon < 1) throw UsageError("simulation horizon must be >= 1");
  if (config.n_stocks < 1) throw UsageError("need at least one stock");
  const double k_hat = integrated_kernel(params.K);
  if (!config.force && k_hat >= 1.0)
    throw NumericalError("daily model is unstable (integrated kernel " +
                         std::to_string(k_hat) + "); pass force");

  const long q = params.q();
  const long burn = config.burn_in >= 0 ? config.burn_in
                                        : std::max(10 * q, 5000L);
  const long T = config.horizon, N = config.n_stocks;
  const long total = q + burn + T;

  const DailyPositionWeights w = assemble_positions(params);
  const Window wk(w.k), wl(w.l);

  ReturnPanel panel;
  panel.dates = synthetic_calendar(T);
  panel.rd = Eigen::MatrixXd::Zero(T, N);
  panel.rn = Eigen::MatrixXd::Zero(T, N);
  panel.r = Eigen::MatrixXd::Zero(T, N);
  panel.valid_d = MaskMatrix::Zero(T, N);
  panel.valid_n = MaskMatrix::Zero(T, N);
  panel.valid_r = MaskMatrix::Ones(T, N);
  for (long s = 0; s < N; ++s) panel.tickers.push_back(stock_name(s));

  std::vector<StockOutcome> outcomes(N);
  parallel_over(N, [&](long s) {
    Rng rng(config.seed, std::uint64_t(s));
    StockOutcome& oc = outcomes[s];
    Eigen::VectorXd r = Eigen::VectorXd::Zero(total);
    Eigen::VectorXd r2 = r;
    for (long t = q; t < total; ++t) {
      const bool emitted = t >= q + burn;
      double sig2 = params.s2 + wk.at(r2, t) + wl.at(r, t);
      if (emitted) oc.min_d = std::min(oc.min_d, sig2);
      if (sig2 < 0.0) {
        if (emitted) {
          ++oc.negative_count;
          if (oc.first_negative_t < 0) {
            oc.first_negative_t = t - q - burn;
            oc.first_negative_value = sig2;
          }
        } else {
          ++oc.burnin_floored;
        }
        sig2 = 0.0;
      }
      r(t) = std::sqrt(sig2) * rng.student_unit(params.nu);
      r2(t) = r(t) * r(t);
    }
    panel.r.col(s) = r.tail(T);
  });

  SimResult result;
  result.min_sigma2_d = std::numeric_limits<double>::infinity();
  result.min_sigma2_n = 0.0;
  for (long s = 0; s < N; ++s) {
    const StockOutcome& oc = outcomes[s];
    if (config.abort_on_negative && oc.negative_count > 0)
      throw NumericalError(
          "negative variance " + std::to_string(oc.first_negative_value) +
          " at emitted date " + std::to_string(oc.first_negative_t) +
          " of stock " + stock_name(s));
    result.burnin_floored += oc.burnin_floored;
    result.negative_count += oc.negative_count;
    result.min_sigma2_d = std::min(result.min_sigma2_d, oc.min_d);
  }
  result.panel = std::move(panel);
  return result;
}

} // namespace onarch
