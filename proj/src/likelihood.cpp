#include "onarch/likelihood.hpp"

#include <cmath>
#include <limits>

#include "onarch/errors.hpp"
#include "onarch/special.hpp"
#include "onarch/threads.hpp"

namespace onarch {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double student_constant(double nu) {
  if (nu <= 2.0) throw std::domain_error("student_constant: nu <= 2");
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) -
         0.5 * std::log(M_PI);
}

double student_loglik_eq7(double sigma2, double r, double nu) {
  if (nu <= 2.0) throw std::domain_error("student_loglik: nu <= 2");
  if (sigma2 <= 0.0) return -kInf;  // invalid region, not a crash
  const double a = (nu - 2.0) * sigma2;
  const double b = a + r * r;
  return 0.5 * nu * std::log(a) - 0.5 * (nu + 1.0) * std::log(b);
}

double student_loglik(double sigma2, double r, double nu) {
  const double core = student_loglik_eq7(sigma2, r, nu);
  return core == -kInf ? core : core + student_constant(nu);
}

StudentDerivs student_derivs(double sigma2, double r, double nu) {
  if (nu <= 2.0) throw std::domain_error("student_derivs: nu <= 2");
  if (sigma2 <= 0.0) {
    StudentDerivs d;
    d.l = -kInf;
    return d;
  }
  const double a = (nu - 2.0) * sigma2;
  const double b = a + r * r;
  StudentDerivs d;
  d.l = 0.5 * nu * std::log(a) - 0.5 * (nu + 1.0) * std::log(b) +
        student_constant(nu);
  d.ds = 0.5 * nu / sigma2 - 0.5 * (nu + 1.0) * (nu - 2.0) / b;
  d.dss = -0.5 * nu / (sigma2 * sigma2) +
          0.5 * (nu + 1.0) * (nu - 2.0) * (nu - 2.0) / (b * b);
  d.dnu = 0.5 * digamma(0.5 * (nu + 1.0)) - 0.5 * digamma(0.5 * nu) +
          0.5 * std::log(a) + 0.5 * nu * sigma2 / a - 0.5 * std::log(b) -
          0.5 * (nu + 1.0) * sigma2 / b;
  d.dsnu = 0.5 / sigma2 - 0.5 * (2.0 * nu - 1.0) / b +
           0.5 * (nu + 1.0) * (nu - 2.0) * sigma2 / (b * b);
  d.dnunu = 0.25 * trigamma(0.5 * (nu + 1.0)) - 0.25 * trigamma(0.5 * nu) +
            sigma2 / a - 0.5 * nu * sigma2 * sigma2 / (a * a) - sigma2 / b +
            0.5 * (nu + 1.0) * sigma2 * sigma2 / (b * b);
  return d;
}

Target target_from_name(const std::string& name) {
  if (name == "day") return Target::day;
  if (name == "night") return Target::night;
  if (name == "daily") return Target::daily;
  throw UsageError("unknown target '" + name + "'");
}

std::string target_name(Target target) {
  switch (target) {
    case Target::day: return "day";
    case Target::night: return "night";
    case Target::daily: return "daily";
  }
  return "";
}

TargetData make_target_data(const ReturnPanel& panel, Target target) {
  TargetData d;
  switch (target) {
    case Target::day:
      d.rd = panel.rd;
      d.rn = panel.rn;
      d.target_r = panel.rd;
      d.mask = panel.valid_d;
      break;
    case Target::night:
      d.rd = panel.rd;
      d.rn = panel.rn;
      d.target_r = panel.rn;
      d.mask = panel.valid_n;
      break;
    case Target::daily:
      d.rd = panel.r;
      d.rn = Eigen::MatrixXd::Zero(panel.n_dates(), panel.n_stocks());
      d.target_r = panel.r;
      d.mask = panel.valid_r;
      break;
  }
  return d;
}

namespace {

struct StockPartial {
  double sum_loglik = 0, sum_eq7 = 0;
  long n = 0, negative = 0;
  Eigen::VectorXd adj[kChannels], madj[kChannels];
  double sum_f1 = 0, sum_f2 = 0, sum_dnu = 0, sum_dnunu = 0, sum_m = 0;
  Eigen::MatrixXd h_jj;
  Eigen::VectorXd h_jnu;
};

} // namespace

PanelPass panel_pass(const PositionWeights& w, double s2, double nu,
                     const TargetData& data, PassLevel level,
                     const std::vector<JacobianColumn>& jacobian) {
  const long T = data.rd.rows(), N = data.rd.cols(), q = w.q;
  if (T < q + 1)
    throw DataError("panel of " + std::to_string(T) +
                    " dates cannot feed a filter with q = " +
                    std::to_string(q));
  const long p = long(jacobian.size());
  const double constant = student_constant(nu);
  const bool want_grad = level != PassLevel::value;
  const bool want_hess = level == PassLevel::hessian;

  std::vector<Eigen::VectorXd> jac_rev(p);
  for (long i = 0; i < p; ++i) jac_rev[i] = jacobian[i].weights.reverse();

  std::vector<StockPartial> partials(N);
  parallel_over(N, [&](long s) {
    StockPartial& part = partials[s];
    const Eigen::VectorXd rd = data.rd.col(s);
    const Eigen::VectorXd rn = data.rn.col(s);
    const Eigen::VectorXd sigma2 = filter_series(w, s2, rd, rn);

    // Channel product series: sigma2_t = s2 + sum c_ch[a] x_ch[t-a].
    Eigen::VectorXd series[kChannels];
    series[kDD] = rd.array().square();
    series[kNN] = rn.array().square();
    series[kND] = 2.0 * rd.array() * rn.array();
    series[kDN] = Eigen::VectorXd::Zero(T);
    series[kDN].head(T - 1) =
        2.0 * rd.head(T - 1).array() * rn.tail(T - 1).array();
    series[kLD] = rd;
    series[kLN] = rn;

    Eigen::VectorXd f1, mvec, f2vec;
    if (want_grad) f1 = Eigen::VectorXd::Zero(T);
    if (want_hess) {
      mvec = Eigen::VectorXd::Zero(T);
      f2vec = Eigen::VectorXd::Zero(T);
      part.h_jj = Eigen::MatrixXd::Zero(p + 1, p + 1);
      part.h_jnu = Eigen::VectorXd::Zero(p + 1);
    }

    Eigen::VectorXd jrow(p + 1);
    for (long t = q; t < T; ++t) {
      if (!data.mask(t, s)) continue;
      const double v = sigma2(t);
      if (v <= 0.0) {
        ++part.negative;
        continue;
      }
      const double r = data.target_r(t, s);
      ++part.n;
      if (!want_grad) {
        const double eq7 = student_loglik_eq7(v, r, nu);
        part.sum_eq7 += eq7;
        part.sum_loglik += eq7 + constant;
        continue;
      }
      const StudentDerivs d = student_derivs(v, r, nu);
      part.sum_loglik += d.l;
      part.sum_eq7 += d.l - constant;
      part.sum_f1 += d.ds;
      part.sum_dnu += d.dnu;
      f1(t) = d.ds;
      if (!want_hess) continue;
      part.sum_f2 += d.dss;
      part.sum_m += d.dsnu;
      part.sum_dnunu += d.dnunu;
      mvec(t) = d.dsnu;
      f2vec(t) = d.dss;
      for (long i = 0; i < p; ++i)
        jrow(i) = jac_rev[i].dot(
            series[jacobian[i].channel].segment(t - q, q + 1));
      jrow(p) = 1.0;  // the s2 coordinate
      part.h_jj.selfadjointView<Eigen::Lower>().rankUpdate(jrow, d.dss);
      part.h_jnu += d.dsnu * jrow;
    }

    if (want_grad) {
      const long n = T - q;
      const auto f1w = f1.segment(q, n);
      for (int ch = 0; ch < kChannels; ++ch) {
        part.adj[ch] = Eigen::VectorXd::Zero(q + 1);
        for (long a = 0; a <= q; ++a)
          part.adj[ch](a) = f1w.dot(series[ch].segment(q - a, n));
      }
    }
    if (want_hess) {
      const long n = T - q;
      const auto mw = mvec.segment(q, n);
      for (int ch = 0; ch < kChannels; ++ch) {
        part.madj[ch] = Eigen::VectorXd::Zero(q + 1);
        for (long a = 0; a <= q; ++a)
          part.madj[ch](a) = mw.dot(series[ch].segment(q - a, n));
      }
    }
  });

  PanelPass out;
  if (want_grad)
    for (int ch = 0; ch < kChannels; ++ch)
      out.adj[ch] = Eigen::VectorXd::Zero(q + 1);
  if (want_hess) {
    for (int ch = 0; ch < kChannels; ++ch)
      out.madj[ch] = Eigen::VectorXd::Zero(q + 1);
    out.h_jj = Eigen::MatrixXd::Zero(p + 1, p + 1);
    out.h_jnu = Eigen::VectorXd::Zero(p + 1);
  }
  for (long s = 0; s < N; ++s) {
    const StockPartial& part = partials[s];
    out.sum_loglik += part.sum_loglik;
    out.sum_eq7 += part.sum_eq7;
    out.n_points += part.n;
    out.negative_count += part.negative;
    if (want_grad) {
      out.sum_f1 += part.sum_f1;
      out.sum_dnu += part.sum_dnu;
      for (int ch = 0; ch < kChannels; ++ch) out.adj[ch] += part.adj[ch];
    }
    if (want_hess) {
      out.sum_f2 += part.sum_f2;
      out.sum_m += part.sum_m;
      out.sum_dnunu += part.sum_dnunu;
      for (int ch = 0; ch < kChannels; ++ch) out.madj[ch] += part.madj[ch];
      out.h_jj += part.h_jj;
      out.h_jnu += part.h_jnu;
    }
  }
  if (want_hess)
    out.h_jj = out.h_jj.selfadjointView<Eigen::Lower>();
  return out;
}

namespace {

LikelihoodReport report_from_pass(const PanelPass& pass) {
  LikelihoodReport rep;
  rep.n_points = pass.n_points;
  rep.negative_variance_count = pass.negative_count;
  rep.valid = pass.negative_count == 0 && pass.n_points > 0;
  if (pass.n_points > 0) {
    rep.loglik_per_point = pass.sum_loglik / pass.n_points;
    rep.loglik_per_point_eq7 = pass.sum_eq7 / pass.n_points;
  }
  return rep;
}

} // namespace

LikelihoodReport panel_loglik(const EquationParams& params, Side side,
                              const ReturnPanel& panel) {
  const TargetData data = make_target_data(
      panel, side == Side::day ? Target::day : Target::night);
  const PositionWeights w = assemble_positions(params, side);
  return report_from_pass(
      panel_pass(w, params.s2, params.nu, data, PassLevel::value));
}

LikelihoodReport panel_loglik(const DailyArchParams& params,
                              const ReturnPanel& panel) {
  const TargetData data = make_target_data(panel, Target::daily);
  const PositionWeights w = daily_position_weights(params);
  return report_from_pass(
      panel_pass(w, params.s2, params.nu, data, PassLevel::value));
}

} // namespace onarch
