#include "onarch/calibrate.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <array>
#include <cmath>
#include <json.hpp>
#include <limits>

#include "onarch/errors.hpp"
#include "onarch/filter.hpp"
#include "onarch/io.hpp"
#include "onarch/special.hpp"
#include "onarch/threads.hpp"

namespace onarch {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
} // namespace

Eigen::VectorXi channel_args(Side side, Channel ch, long q) {
  Eigen::VectorXi args = Eigen::VectorXi::Zero(q + 1);
  const bool day = side == Side::day;
  switch (ch) {
    case kDD:
    case kND:
    case kLD:
      for (long a = 1; a <= q; ++a) args(a) = int(a);
      break;
    case kNN:
    case kLN:
      if (day)
        for (long j = 0; j <= q; ++j) args(j) = int(j + 1);
      else
        for (long j = 1; j <= q; ++j) args(j) = int(j);
      break;
    case kDN:
      if (day)
        for (long a = 1; a <= q; ++a) args(a) = int(a);
      else
        for (long a = 2; a <= q; ++a) args(a) = int(a - 1);
      break;
  }
  return args;
}

const KernelSpec& channel_kernel(const EquationParams& params, Channel ch) {
  switch (ch) {
    case kDD: return params.K_DD;
    case kNN: return params.K_NN;
    case kND: return params.K_ND;
    case kDN: return params.K_DN;
    case kLD: return params.L_D;
    case kLN: return params.L_N;
  }
  throw std::logic_error("channel_kernel: bad channel");
}

KernelSpec& channel_kernel(EquationParams& params, Channel ch) {
  return const_cast<KernelSpec&>(
      channel_kernel(const_cast<const EquationParams&>(params), ch));
}

bool channel_is_leverage(Channel ch) { return ch == kLD || ch == kLN; }

std::string channel_name(Channel ch) {
  switch (ch) {
    case kDD: return "DD";
    case kNN: return "NN";
    case kND: return "ND";
    case kDN: return "DN";
    case kLD: return "LD";
    case kLN: return "LN";
  }
  return "";
}

namespace {

// ---------------------------------------------------------------------
// Target layout: which equation side carries the filter and which
// channels are estimated. The daily model is the night-side equation
// (strictly causal) restricted to one quadratic and one leverage
// channel, with the daily return in the rd slot.
struct TargetLayout {
  Target target;
  Side side;
  std::vector<Channel> quad, lev, all;
};

TargetLayout layout_for(Target target) {
  TargetLayout l;
  l.target = target;
  if (target == Target::daily) {
    l.side = Side::night;
    l.quad = {kDD};
    l.lev = {kLD};
  } else {
    l.side = target == Target::day ? Side::day : Side::night;
    l.quad = {kDD, kNN, kND, kDN};
    l.lev = {kLD, kLN};
  }
  l.all = l.quad;
  l.all.insert(l.all.end(), l.lev.begin(), l.lev.end());
  return l;
}

std::string target_suffix(Target t) {
  switch (t) {
    case Target::day: return "_D";
    case Target::night: return "_N";
    case Target::daily: return "";
  }
  return "";
}

// "K_DD_D", "L_N_N", or the daily model's "K" / "L".
std::string kernel_label(const TargetLayout& l, Channel ch) {
  if (l.target == Target::daily) return ch == kDD ? "K" : "L";
  switch (ch) {
    case kDD: return "K_DD" + target_suffix(l.target);
    case kNN: return "K_NN" + target_suffix(l.target);
    case kND: return "K_ND" + target_suffix(l.target);
    case kDN: return "K_DN" + target_suffix(l.target);
    case kLD: return "L_D" + target_suffix(l.target);
    case kLN: return "L_N" + target_suffix(l.target);
  }
  return "";
}

// Parameter names match the Wald/report vocabulary: "g_DD_D",
// "alpha_NN_N", "omega_LD_D"; the daily model uses "g_K", "omega_L".
std::string shape_param_name(const TargetLayout& l, Channel ch, int which) {
  static const char* stem[3] = {"g_", "alpha_", "omega_"};
  std::string body;
  if (l.target == Target::daily)
    body = ch == kDD ? "K" : "L";
  else
    body = channel_name(ch) + target_suffix(l.target);
  return stem[which] + body;
}

// ---------------------------------------------------------------------
// Natural <-> unconstrained coordinates. Positive parameters (diagonal
// amplitudes, all alphas and omegas, s2) move on a log scale, the tail
// on log(nu - 2); signed amplitudes stay linear.
enum class Xf { linear, log, tail };

Eigen::VectorXd to_theta(const Eigen::VectorXd& u, const std::vector<Xf>& xf) {
  Eigen::VectorXd th(u.size());
  for (long i = 0; i < u.size(); ++i)
    th(i) = xf[i] == Xf::linear ? u(i)
          : xf[i] == Xf::log ? std::exp(u(i))
                             : 2.0 + std::exp(u(i));
  return th;
}

Eigen::VectorXd to_u(const Eigen::VectorXd& th, const std::vector<Xf>& xf) {
  Eigen::VectorXd u(th.size());
  for (long i = 0; i < th.size(); ++i)
    u(i) = xf[i] == Xf::linear ? th(i)
         : xf[i] == Xf::log ? std::log(th(i))
                            : std::log(th(i) - 2.0);
  return u;
}

Eigen::VectorXd dtheta_du(const Eigen::VectorXd& th,
                          const std::vector<Xf>& xf) {
  Eigen::VectorXd d(th.size());
  for (long i = 0; i < th.size(); ++i)
    d(i) = xf[i] == Xf::linear ? 1.0
         : xf[i] == Xf::log ? th(i)
                            : th(i) - 2.0;
  return d;
}

// Chain rule into the unconstrained coordinates; for the exponential
// maps d2theta/du2 equals dtheta/du, for linear ones it is zero.
void chain_to_u(const Eigen::VectorXd& th, const std::vector<Xf>& xf,
                Eigen::VectorXd* grad, Eigen::MatrixXd* hess) {
  const Eigen::VectorXd d = dtheta_du(th, xf);
  if (hess) {
    *hess = d.asDiagonal() * (*hess) * d.asDiagonal();
    for (long i = 0; i < th.size(); ++i)
      if (xf[i] != Xf::linear) (*hess)(i, i) += (*grad)(i) * d(i);
  }
  if (grad) *grad = grad->cwiseProduct(d);
}

// ---------------------------------------------------------------------
// Shape-parameter sensitivities as position weights. "which" is the
// semantic slot 0 = g, 1 = alpha, 2 = omega.
double kernel_shape(const KernelSpec& k, long arg) {
  return k.shape == KernelSpec::Shape::power_law_exp
             ? std::pow(double(arg), -k.alpha) * std::exp(-k.omega * arg)
             : std::exp(-k.omega * arg);
}

Eigen::VectorXd dweights(const KernelSpec& k, const Eigen::VectorXi& args,
                         int which) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(args.size());
  for (long pos = 0; pos < args.size(); ++pos) {
    const long arg = args(pos);
    if (arg == 0) continue;
    const double shape = kernel_shape(k, arg);
    switch (which) {
      case 0: w(pos) = shape; break;
      case 1: w(pos) = -std::log(double(arg)) * k.g * shape; break;
      case 2: w(pos) = -double(arg) * k.g * shape; break;
    }
  }
  return w;
}

Eigen::VectorXd d2weights(const KernelSpec& k, const Eigen::VectorXi& args,
                          int wi, int wj) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(args.size());
  const int a = std::min(wi, wj), b = std::max(wi, wj);
  for (long pos = 0; pos < args.size(); ++pos) {
    const long arg = args(pos);
    if (arg == 0) continue;
    const double shape = kernel_shape(k, arg);
    const double val = k.g * shape;
    const double ln = std::log(double(arg));
    double d2 = 0.0;
    if (a == 0 && b == 0) d2 = 0.0;
    else if (a == 0 && b == 1) d2 = -ln * shape;
    else if (a == 0 && b == 2) d2 = -double(arg) * shape;
    else if (a == 1 && b == 1) d2 = ln * ln * val;
    else if (a == 1 && b == 2) d2 = ln * double(arg) * val;
    else d2 = double(arg) * double(arg) * val;
    w(pos) = d2;
  }
  return w;
}

// ---------------------------------------------------------------------
// Parameter-space descriptions.
struct Coord {
  enum Kind { table, shape, s2, nu } kind;
  Channel ch = kDD;
  long arg = 0;  // table: kernel argument
  int which = 0; // shape: 0 g, 1 alpha, 2 omega
  std::string name;
  Xf xf = Xf::linear;
};

std::vector<Coord> free_coords(const TargetLayout& l, long q) {
  std::vector<Coord> c;
  for (Channel ch : l.all)
    for (long k = 1; k <= q; ++k)
      c.push_back({Coord::table, ch, k, 0,
                   kernel_label(l, ch) + "[" + std::to_string(k) + "]",
                   Xf::linear});
  c.push_back({Coord::s2, kDD, 0, 0, "s2", Xf::log});
  c.push_back({Coord::nu, kDD, 0, 0, "nu", Xf::tail});
  return c;
}

std::vector<Coord> shape_coords(const TargetLayout& l) {
  std::vector<Coord> c;
  for (Channel ch : l.quad) {
    const bool diag = ch == kDD || ch == kNN;
    c.push_back({Coord::shape, ch, 0, 0, shape_param_name(l, ch, 0),
                 diag ? Xf::log : Xf::linear});
    c.push_back({Coord::shape, ch, 0, 1, shape_param_name(l, ch, 1), Xf::log});
    c.push_back({Coord::shape, ch, 0, 2, shape_param_name(l, ch, 2), Xf::log});
  }
  for (Channel ch : l.lev) {
    c.push_back({Coord::shape, ch, 0, 0, shape_param_name(l, ch, 0),
                 Xf::linear});
    c.push_back({Coord::shape, ch, 0, 2, shape_param_name(l, ch, 2), Xf::log});
  }
  c.push_back({Coord::s2, kDD, 0, 0, "s2", Xf::log});
  c.push_back({Coord::nu, kDD, 0, 0, "nu", Xf::tail});
  return c;
}

std::vector<Xf> coord_xfs(const std::vector<Coord>& coords) {
  std::vector<Xf> xf(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) xf[i] = coords[i].xf;
  return xf;
}

std::vector<std::string> coord_names(const std::vector<Coord>& coords) {
  std::vector<std::string> n(coords.size());
  for (size_t i = 0; i < coords.size(); ++i) n[i] = coords[i].name;
  return n;
}

// Natural parameter vector of an equation under a coordinate list.
Eigen::VectorXd pack(const EquationParams& eq,
                     const std::vector<Coord>& coords) {
  Eigen::VectorXd th(long(coords.size()));
  for (size_t i = 0; i < coords.size(); ++i) {
    const Coord& c = coords[i];
    const KernelSpec& k = channel_kernel(eq, c.ch);
    switch (c.kind) {
      case Coord::table: th(long(i)) = k.coefficients(c.arg - 1); break;
      case Coord::shape:
        th(long(i)) = c.which == 0 ? k.g : c.which == 1 ? k.alpha : k.omega;
        break;
      case Coord::s2: th(long(i)) = eq.s2; break;
      case Coord::nu: th(long(i)) = eq.nu; break;
    }
  }
  return th;
}

void unpack(const Eigen::VectorXd& th, const std::vector<Coord>& coords,
            EquationParams* eq) {
  for (size_t i = 0; i < coords.size(); ++i) {
    const Coord& c = coords[i];
    KernelSpec& k = channel_kernel(*eq, c.ch);
    switch (c.kind) {
      case Coord::table: k.coefficients(c.arg - 1) = th(long(i)); break;
      case Coord::shape:
        (c.which == 0 ? k.g : c.which == 1 ? k.alpha : k.omega) = th(long(i));
        break;
      case Coord::s2: eq->s2 = th(long(i)); break;
      case Coord::nu: eq->nu = th(long(i)); break;
    }
  }
}

// An equation whose estimated kernels are free tables (zeroed) and
// whose untouched channels are zero, at horizon q.
EquationParams blank_equation(const TargetLayout& l, long q) {
  EquationParams eq;
  eq.K_DD = KernelSpec::zero(q);
  eq.K_NN = KernelSpec::zero(q);
  eq.K_ND = KernelSpec::zero(q);
  eq.K_DN = KernelSpec::zero(q);
  eq.L_D = KernelSpec::zero(q);
  eq.L_N = KernelSpec::zero(q);
  eq.s2 = 1.0;
  eq.nu = 8.0;
  (void)l;
  return eq;
}

// Position of each kernel argument (arg -> position), -1 where a table
// entry has no position at this horizon (it stays at its start value).
Eigen::VectorXi arg_positions(Side side, Channel ch, long q) {
  const Eigen::VectorXi args = channel_args(side, ch, q);
  Eigen::VectorXi apos = Eigen::VectorXi::Constant(q + 1, -1);
  for (long pos = 0; pos <= q; ++pos)
    if (args(pos) >= 1 && args(pos) <= q) apos(args(pos)) = int(pos);
  return apos;
}

double nu_from_kurtosis(const TargetData& data, long q) {
  double m2 = 0, m4 = 0;
  long n = 0;
  for (long s = 0; s < data.rd.cols(); ++s)
    for (long t = q; t < data.rd.rows(); ++t) {
      if (!data.mask(t, s)) continue;
      const double x = data.target_r(t, s);
      m2 += x * x;
      m4 += x * x * x * x;
      ++n;
    }
  if (n == 0 || m2 <= 0.0) return 8.0;
  m2 /= n;
  m4 /= n;
  const double kurt = m4 / (m2 * m2);
  if (kurt <= 3.2) return 20.0;
  const double nu = (4.0 * kurt - 6.0) / (kurt - 3.0);
  return std::clamp(nu, 2.2, 100.0);
}

// The six product series of one stock; sigma2_t = s2 + sum over
// positions of c_ch[a] series_ch[t - a].
void build_series(const TargetData& data, long s,
                  std::array<Eigen::VectorXd, kChannels>* out) {
  const Eigen::VectorXd rd = data.rd.col(s), rn = data.rn.col(s);
  const long T = rd.size();
  (*out)[kDD] = rd.array().square();
  (*out)[kNN] = rn.array().square();
  (*out)[kND] = 2.0 * rd.array() * rn.array();
  (*out)[kDN] = Eigen::VectorXd::Zero(T);
  (*out)[kDN].head(T - 1) =
      2.0 * rd.head(T - 1).array() * rn.tail(T - 1).array();
  (*out)[kLD] = rd;
  (*out)[kLN] = rn;
}

// Flagged short-sample start: diagonal kernels spread as 1/tau at a
// quarter of the variance budget each, baseline at the remainder.
void diagonal_init(const TargetLayout& l, long q, EquationParams* eq) {
  const double total = l.target == Target::daily ? 0.5 : 0.25;
  double hsum = 0.0;
  for (long k = 1; k <= q; ++k) hsum += 1.0 / double(k);
  for (Channel ch : l.quad) {
    if (ch != kDD && ch != kNN) continue;
    KernelSpec& kern = channel_kernel(*eq, ch);
    for (long k = 1; k <= q; ++k)
      kern.coefficients(k - 1) = total / hsum / double(k);
  }
  eq->s2 = 0.5;
}

LikelihoodReport report_at(const EquationParams& eq, const TargetLayout& l,
                           const TargetData& data) {
  const PositionWeights w = assemble_positions(eq, l.side);
  const PanelPass pass =
      panel_pass(w, eq.s2, eq.nu, data, PassLevel::value);
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

// Pseudo-inverse standard errors from an information matrix; deficient
// directions get infinite errors and a flag.
Eigen::VectorXd stderr_from_information(const Eigen::MatrixXd& info,
                                        std::vector<std::string>* flags,
                                        const std::string& stage) {
  const long n = info.rows();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(info);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double thresh =
      1e-10 * std::max(lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0, 1e-300);
  bool deficient = false;
  Eigen::VectorXd inv(n);
  for (long i = 0; i < n; ++i) {
    if (lam(i) <= thresh) {
      inv(i) = 0.0;
      deficient = true;
    } else {
      inv(i) = 1.0 / lam(i);
    }
  }
  Eigen::VectorXd var =
      es.eigenvectors().array().square().matrix() * inv;
  if (deficient && flags) flags->push_back(stage + "_information_singular");
  return var.cwiseMax(0.0).cwiseSqrt();
}

void set_kernel_errs(const TargetLayout& l, const std::vector<Coord>& coords,
                     const Eigen::VectorXd& stderrs, EquationParams* eq) {
  (void)l;
  for (size_t i = 0; i < coords.size(); ++i) {
    const Coord& c = coords[i];
    const double half = 1.98 * stderrs(long(i));
    if (!std::isfinite(half)) continue;
    switch (c.kind) {
      case Coord::shape: {
        KernelSpec& k = channel_kernel(*eq, c.ch);
        (c.which == 0 ? k.g_err : c.which == 1 ? k.alpha_err : k.omega_err) =
            half;
        break;
      }
      case Coord::s2: eq->s2_err = half; break;
      case Coord::nu: eq->nu_err = half; break;
      case Coord::table: break;
    }
  }
}

void fill_pool_constants(const ReturnPanel& panel, FitResult* fit) {
  const long T = panel.n_dates(), N = panel.n_stocks();
  double cm = 0, cml = 0, d2 = 0, n2 = 0, r2 = 0;
  long n_cm = 0, n_cml = 0, n_r = 0;
  for (long s = 0; s < N; ++s)
    for (long t = 0; t < T; ++t) {
      if (panel.valid_d(t, s) && panel.valid_n(t, s)) {
        cm += panel.rd(t, s) * panel.rn(t, s);
        ++n_cm;
      }
      if (t + 1 < T && panel.valid_d(t, s) && panel.valid_n(t + 1, s)) {
        cml += panel.rd(t, s) * panel.rn(t + 1, s);
        ++n_cml;
      }
      if (panel.valid_r(t, s)) {
        d2 += panel.rd(t, s) * panel.rd(t, s);
        n2 += panel.rn(t, s) * panel.rn(t, s);
        r2 += panel.r(t, s) * panel.r(t, s);
        ++n_r;
      }
    }
  fit->cross_moment = n_cm ? cm / n_cm : 0.0;
  fit->cross_moment_leading = n_cml ? cml / n_cml : 0.0;
  if (n_r > 0 && r2 > 0.0)
    fit->variance_shares << d2 / r2, n2 / r2;
}

} // namespace

// -----------------------------------------------------------------------
// Stage 1
// -----------------------------------------------------------------------

FitResult moment_init(const ReturnPanel& panel, Target target, long q,
                      std::vector<std::string>* flags) {
  const TargetLayout l = layout_for(target);
  const TargetData data = make_target_data(panel, target);
  const long T = data.rd.rows(), N = data.rd.cols();
  if (T < q + 1)
    throw DataError("panel too short for q = " + std::to_string(q));

  FitResult fit;
  fit.target = target;
  fit.equation = blank_equation(l, q);
  fit.equation.nu = nu_from_kurtosis(data, q);
  fill_pool_constants(panel, &fit);

  long n_obs = 0;
  for (long s = 0; s < N; ++s)
    for (long t = q; t < T; ++t)
      if (data.mask(t, s)) ++n_obs;
  fit.n_points = n_obs;

  if (n_obs < 100 * q) {
    diagonal_init(l, q, &fit.equation);
    if (flags) flags->push_back("moment_init_fallback_short_sample");
    return fit;
  }

  // Design columns: legal (channel, position) pairs whose argument the
  // free tables can represent.
  struct Col {
    Channel ch;
    int pos;
    long arg;
  };
  std::vector<Col> qcols, lcols;
  std::array<Eigen::VectorXi, kChannels> args;
  for (Channel ch : l.all) {
    args[ch] = channel_args(l.side, ch, q);
    for (long pos = 0; pos <= q; ++pos) {
      const long a = args[ch](pos);
      if (a < 1 || a > q) continue;
      (channel_is_leverage(ch) ? lcols : qcols).push_back(
          {ch, int(pos), a});
    }
  }

  // Two pooled regressions of the squared target return: on the lagged
  // quadratic products (intercept = baseline) and on the lagged returns
  // (slopes = leverage tables).
  auto solve_ls = [&](const std::vector<Col>& cols,
                      Eigen::VectorXd* beta) {
    const long p = long(cols.size()) + 1;  // + intercept
    std::vector<Eigen::MatrixXd> grams(N);
    std::vector<Eigen::VectorXd> rhss(N);
    parallel_over(N, [&](long s) {
      Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
      std::array<Eigen::VectorXd, kChannels> series;
      build_series(data, s, &series);
      Eigen::VectorXd x(p);
      for (long t = q; t < T; ++t) {
        if (!data.mask(t, s)) continue;
        for (size_t c = 0; c < cols.size(); ++c)
          x(long(c)) = series[cols[c].ch](t - cols[c].pos);
        x(p - 1) = 1.0;
        const double y = data.target_r(t, s) * data.target_r(t, s);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(x, 1.0);
        rhs += y * x;
      }
      grams[s] = std::move(gram);
      rhss[s] = std::move(rhs);
    });
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
    for (long s = 0; s < N; ++s) {
      gram += grams[s];
      rhs += rhss[s];
    }
    gram = gram.selfadjointView<Eigen::Lower>();
    gram.diagonal().array() +=
        1e-10 * std::max(gram.diagonal().maxCoeff(), 1e-300);
    *beta = gram.ldlt().solve(rhs);
    return beta->allFinite();
  };

  Eigen::VectorXd bq, bl;
  if (!solve_ls(qcols, &bq) || !solve_ls(lcols, &bl)) {
    diagonal_init(l, q, &fit.equation);
    if (flags) flags->push_back("moment_init_fallback_degenerate");
    return fit;
  }

  for (size_t c = 0; c < qcols.size(); ++c)
    channel_kernel(fit.equation, qcols[c].ch)
        .coefficients(qcols[c].arg - 1) = bq(long(c));
  for (size_t c = 0; c < lcols.size(); ++c)
    channel_kernel(fit.equation, lcols[c].ch)
        .coefficients(lcols[c].arg - 1) = bl(long(c));
  fit.equation.s2 = bq(long(qcols.size()));
  if (fit.equation.s2 <= 0.0) {
    // Keep the slopes; a nonpositive intercept only needs a usable
    // baseline for the log parameterization of the next stage.
    fit.equation.s2 = 1e-4;
    if (flags) flags->push_back("moment_init_baseline_clamped");
  }
  return fit;
}

// -----------------------------------------------------------------------
// Stage 2
// -----------------------------------------------------------------------

FitResult mle_free(const ReturnPanel& panel, Target target,
                   const FitResult& start, const CalibrationOptions& options) {
  const TargetLayout l = layout_for(target);
  const long q = start.equation.q();
  const TargetData data = make_target_data(panel, target);
  const std::vector<Coord> coords = free_coords(l, q);
  const std::vector<Xf> xf = coord_xfs(coords);
  const long P = long(coords.size());

  std::array<Eigen::VectorXi, kChannels> apos;
  for (Channel ch : l.all) apos[ch] = arg_positions(l.side, ch, q);

  // The variance is linear in every table entry, so the Jacobian
  // columns are position indicators, the curvature-of-weights term
  // vanishes, and the table-space Hessian from one pass is exact.
  // Entries without a position at this horizon stay at their start.
  std::vector<JacobianColumn> jac;
  std::vector<long> midx;  // Hessian slot -> coordinate index
  for (long i = 0; i < P; ++i) {
    const Coord& c = coords[i];
    if (c.kind != Coord::table) continue;
    const int pos = apos[c.ch](c.arg);
    if (pos < 0) continue;
    Eigen::VectorXd wv = Eigen::VectorXd::Zero(q + 1);
    wv(pos) = 1.0;
    jac.push_back({c.ch, std::move(wv)});
    midx.push_back(i);
  }
  const long pj = long(jac.size());
  midx.push_back(P - 2);  // the s2 slot panel_pass appends
  midx.push_back(P - 1);  // the nu border

  EquationParams eq = start.equation;
  const Eigen::VectorXd u0 = to_u(pack(eq, coords), xf);

  long n_points = 0;
  const NewtonObjective fgh = [&](const Eigen::VectorXd& u,
                                  Eigen::VectorXd* grad,
                                  Eigen::MatrixXd* hess) {
    const Eigen::VectorXd th = to_theta(u, xf);
    unpack(th, coords, &eq);
    // Domain guards: the tail transform can underflow to 2, exp can
    // overflow, and past ~1e8 the Student normalization loses all
    // precision to lgamma cancellation, so treat those as invalid.
    if (!th.allFinite() || !(eq.nu > 2.0) || eq.nu > 1e8) return -kInf;
    const PositionWeights w = assemble_positions(eq, l.side);
    const PassLevel level = hess ? PassLevel::hessian
                          : grad ? PassLevel::gradient
                                 : PassLevel::value;
    const PanelPass pass = panel_pass(w, eq.s2, eq.nu, data, level,
                                      hess ? jac : std::vector<JacobianColumn>{});
    if (pass.negative_count > 0 || pass.n_points == 0) return -kInf;
    n_points = pass.n_points;
    const double n = double(pass.n_points);
    Eigen::VectorXd gn;
    if (grad || hess) {
      gn.resize(P);
      for (long i = 0; i < P; ++i) {
        const Coord& c = coords[i];
        if (c.kind == Coord::table) {
          const int pos = apos[c.ch](c.arg);
          gn(i) = pos < 0 ? 0.0 : pass.adj[c.ch](pos);
        } else if (c.kind == Coord::s2) {
          gn(i) = pass.sum_f1;
        } else {
          gn(i) = pass.sum_dnu;
        }
      }
      gn /= n;
    }
    if (hess) {
      Eigen::MatrixXd hn = Eigen::MatrixXd::Zero(P, P);
      for (long i = 0; i <= pj; ++i)
        for (long k = 0; k <= pj; ++k)
          hn(midx[i], midx[k]) = pass.h_jj(i, k);
      for (long i = 0; i <= pj; ++i) {
        hn(midx[i], P - 1) = pass.h_jnu(i);
        hn(P - 1, midx[i]) = pass.h_jnu(i);
      }
      hn(P - 1, P - 1) = pass.sum_dnunu;
      hn /= n;
      chain_to_u(th, xf, &gn, &hn);
      *hess = hn;
      if (grad) *grad = gn;
      return pass.sum_loglik / n;
    }
    if (grad) {
      chain_to_u(th, xf, &gn, nullptr);
      *grad = gn;
    }
    return pass.sum_loglik / n;
  };

  AscentOptions aopt;
  aopt.max_iterations = options.max_iterations_free;
  aopt.gradient_tolerance = options.gradient_tolerance;
  const AscentResult res = newton_maximize(fgh, u0, aopt);

  FitResult fit;
  fit.target = target;
  fit.cross_moment = start.cross_moment;
  fit.cross_moment_leading = start.cross_moment_leading;
  fit.variance_shares = start.variance_shares;
  const Eigen::VectorXd th = to_theta(res.x, xf);
  unpack(th, coords, &eq);
  fit.equation = eq;
  fit.parameter_names = coord_names(coords);
  fit.values = th;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.final_gradient_norm = res.gradient_norm;
  fit.n_points = n_points;
  fit.likelihood = report_at(eq, l, data);

  // Information matrix once more at the optimum, in natural space.
  const PositionWeights w = assemble_positions(eq, l.side);
  const PanelPass pass =
      panel_pass(w, eq.s2, eq.nu, data, PassLevel::hessian, jac);
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(pj + 2, pj + 2);
  h.topLeftCorner(pj + 1, pj + 1) = pass.h_jj;
  h.block(0, pj + 1, pj + 1, 1) = pass.h_jnu;
  h.block(pj + 1, 0, 1, pj + 1) = pass.h_jnu.transpose();
  h(pj + 1, pj + 1) = pass.sum_dnunu;

  const Eigen::VectorXd se =
      stderr_from_information(-h, &fit.flags, "free");
  fit.stderrs = Eigen::VectorXd::Constant(P, kInf);
  for (long j = 0; j <= pj + 1; ++j) fit.stderrs(midx[j]) = se(j);
  return fit;
}

// -----------------------------------------------------------------------
// Stage 3a
// -----------------------------------------------------------------------

namespace {

struct FormFit {
  double g = 0, alpha = 1.0, omega = 0.02;
  bool fallback = false;
};

// Log-log (quadratic) or log-linear (leverage) least squares over the
// dominant-sign subset of a free table.
FormFit fit_form(const Eigen::VectorXd& values, bool leverage,
                 bool force_positive) {
  const long m = values.size();
  FormFit f;
  const double total = values.sum();
  double sign = total < 0.0 ? -1.0 : 1.0;
  if (force_positive) sign = 1.0;

  std::vector<long> usable;
  for (long k = 0; k < m; ++k)
    if (sign * values(k) > 0.0) usable.push_back(k);

  if (long(usable.size()) < 3) {
    f.fallback = true;
  } else {
    const long pcols = leverage ? 2 : 3;
    Eigen::MatrixXd X(long(usable.size()), pcols);
    Eigen::VectorXd y(long(usable.size()));
    for (size_t i = 0; i < usable.size(); ++i) {
      const double tau = double(usable[i] + 1);
      X(long(i), 0) = 1.0;
      if (leverage) {
        X(long(i), 1) = tau;
      } else {
        X(long(i), 1) = std::log(tau);
        X(long(i), 2) = tau;
      }
      y(long(i)) = std::log(sign * values(usable[i]));
    }
    const Eigen::VectorXd beta = X.colPivHouseholderQr().solve(y);
    if (!beta.allFinite()) {
      f.fallback = true;
    } else {
      f.g = sign * std::exp(beta(0));
      f.alpha = leverage ? 0.0 : -beta(1);
      f.omega = leverage ? -beta(1) : -beta(2);
    }
  }

  if (f.fallback) {
    f.alpha = leverage ? 0.0 : 1.0;
    f.omega = 0.02;
    const double hsum = leverage
        ? Eigen::ArrayXd::LinSpaced(m, 1, double(m))
              .unaryExpr([&](double t) { return std::exp(-f.omega * t); })
              .sum()
        : power_law_sum(f.alpha, f.omega, m);
    f.g = hsum > 0.0 ? total / hsum : 0.0;
  }
  if (force_positive && f.g <= 0.0) {
    f.g = 1e-4;
    f.fallback = true;
  }
  if (!leverage) f.alpha = std::clamp(f.alpha, 0.01, 10.0);
  f.omega = std::clamp(f.omega, 1e-6, 5.0);
  return f;
}

} // namespace

FitResult fit_functional_forms(const FitResult& free_fit, long q,
                               std::vector<std::string>* flags) {
  const TargetLayout l = layout_for(free_fit.target);
  const long qf = free_fit.equation.q();

  FitResult fit = free_fit;
  fit.parameter_names.clear();
  fit.values.resize(0);
  fit.stderrs.resize(0);
  fit.hessian.resize(0, 0);
  fit.flags.clear();
  fit.converged = false;
  fit.iterations = 0;

  EquationParams eq = blank_equation(l, q);
  eq.s2 = free_fit.equation.s2;
  eq.nu = free_fit.equation.nu;

  for (size_t ci = 0; ci < l.all.size(); ++ci) {
    const Channel ch = l.all[ci];
    const Eigen::VectorXi apos = arg_positions(l.side, ch, qf);
    long m_used = 0;
    while (m_used < qf && apos(m_used + 1) >= 0) ++m_used;
    const Eigen::VectorXd values =
        channel_kernel(free_fit.equation, ch).coefficients.head(m_used);

    // A kernel nowhere outside its 95% band starts from the fallback
    // shape rather than from fitted noise.
    bool significant = false;
    if (free_fit.stderrs.size() >= 6 * qf &&
        free_fit.stderrs.size() == long(free_fit.parameter_names.size())) {
      const long base = long(ci) * qf;
      for (long k = 0; k < m_used; ++k) {
        const double se = free_fit.stderrs(base + k);
        if (!std::isfinite(se) || std::abs(values(k)) > 1.98 * se) {
          significant = true;
          break;
        }
      }
    } else {
      significant = true;
    }

    const bool lev = channel_is_leverage(ch);
    const bool diag = !lev && (ch == kDD || ch == kNN);
    FormFit f;
    if (!significant) {
      f.fallback = true;
      f.alpha = lev ? 0.0 : 1.0;
      f.omega = 0.02;
      const double hsum =
          lev ? std::exp(-f.omega) * (1 - std::exp(-f.omega * m_used)) /
                    (1 - std::exp(-f.omega))
              : power_law_sum(f.alpha, f.omega, m_used);
      f.g = hsum > 0.0 ? values.sum() / hsum : 0.0;
      if (diag && f.g <= 0.0) f.g = 1e-4;
      if (flags) flags->push_back("insignificant_" + kernel_label(l, ch));
    } else {
      f = fit_form(values, lev, diag);
      if (f.fallback && flags)
        flags->push_back("form_fallback_" + kernel_label(l, ch));
    }

    channel_kernel(eq, ch) =
        lev ? KernelSpec::exponential(f.g, f.omega, q)
            : KernelSpec::power_law(f.g, f.alpha, f.omega, q);
  }

  if (eq.s2 <= 1e-10) eq.s2 = 1e-4;
  fit.equation = eq;
  if (flags) {
    fit.flags = *flags;
  }
  return fit;
}

// -----------------------------------------------------------------------
// Stage 3b
// -----------------------------------------------------------------------

FitResult mle_parametric(const ReturnPanel& panel, Target target,
                         const FitResult& start,
                         const CalibrationOptions& options) {
  const TargetLayout l = layout_for(target);
  const long q = start.equation.q();
  const TargetData data = make_target_data(panel, target);
  const std::vector<Coord> coords = shape_coords(l);
  const std::vector<Xf> xf = coord_xfs(coords);
  const long P = long(coords.size());
  const long p = P - 2;  // shape coordinates ahead of s2, nu

  std::array<Eigen::VectorXi, kChannels> args;
  for (Channel ch : l.all) args[ch] = channel_args(l.side, ch, q);

  FitResult fit;
  fit.target = target;
  fit.cross_moment = start.cross_moment;
  fit.cross_moment_leading = start.cross_moment_leading;
  fit.variance_shares = start.variance_shares;

  EquationParams eq = start.equation;
  if (eq.s2 <= 0.0) eq.s2 = 1e-4;

  // Sensitivity columns of the current kernels, by coordinate.
  const auto make_dw = [&](const EquationParams& e) {
    std::vector<Eigen::VectorXd> dw(p);
    for (long i = 0; i < p; ++i)
      dw[i] = dweights(channel_kernel(e, coords[i].ch), args[coords[i].ch],
                       coords[i].which);
    return dw;
  };

  long n_points = 0;
  const NewtonObjective fgh = [&](const Eigen::VectorXd& u,
                                  Eigen::VectorXd* grad,
                                  Eigen::MatrixXd* hess) {
    const Eigen::VectorXd th = to_theta(u, xf);
    unpack(th, coords, &eq);
    // Domain guards: the tail transform can underflow to 2, exp can
    // overflow, and past ~1e8 the Student normalization loses all
    // precision to lgamma cancellation, so treat those as invalid.
    if (!th.allFinite() || !(eq.nu > 2.0) || eq.nu > 1e8) return -kInf;
    const PositionWeights w = assemble_positions(eq, l.side);
    const PassLevel level = hess ? PassLevel::hessian
                          : grad ? PassLevel::gradient
                                 : PassLevel::value;
    std::vector<JacobianColumn> jac;
    std::vector<Eigen::VectorXd> dw;
    if (grad || hess) dw = make_dw(eq);
    if (hess) {
      jac.reserve(p);
      for (long i = 0; i < p; ++i) jac.push_back({coords[i].ch, dw[i]});
    }
    const PanelPass pass = panel_pass(w, eq.s2, eq.nu, data, level, jac);
    if (pass.negative_count > 0 || pass.n_points == 0) return -kInf;
    n_points = pass.n_points;
    const double n = double(pass.n_points);

    Eigen::VectorXd gn;
    if (grad || hess) {
      gn.resize(P);
      for (long i = 0; i < p; ++i) gn(i) = dw[i].dot(pass.adj[coords[i].ch]);
      gn(p) = pass.sum_f1;
      gn(P - 1) = pass.sum_dnu;
      gn /= n;
    }
    Eigen::MatrixXd hn;
    if (hess) {
      hn = Eigen::MatrixXd::Zero(P, P);
      hn.topLeftCorner(p + 1, p + 1) = pass.h_jj;
      // Curvature of the kernel weights themselves, within one kernel.
      for (size_t ci = 0; ci < l.all.size(); ++ci) {
        const Channel ch = l.all[ci];
        std::vector<long> idx;
        for (long i = 0; i < p; ++i)
          if (coords[i].ch == ch) idx.push_back(i);
        const KernelSpec& k = channel_kernel(eq, ch);
        for (size_t a = 0; a < idx.size(); ++a)
          for (size_t b = a; b < idx.size(); ++b) {
            const Eigen::VectorXd d2 = d2weights(
                k, args[ch], coords[idx[a]].which, coords[idx[b]].which);
            const double v = d2.dot(pass.adj[ch]);
            hn(idx[a], idx[b]) += v;
            if (a != b) hn(idx[b], idx[a]) += v;
          }
      }
      hn.block(0, P - 1, p + 1, 1) = pass.h_jnu;
      hn.block(P - 1, 0, 1, p + 1) = pass.h_jnu.transpose();
      hn(P - 1, P - 1) = pass.sum_dnunu;
      hn /= n;
    }
    chain_to_u(th, xf, (grad || hess) ? &gn : nullptr, hess ? &hn : nullptr);
    if (grad) *grad = gn;
    if (hess) *hess = hn;
    return pass.sum_loglik / n;
  };

  // The functional-form start can stray into negative variances; damp
  // the signed amplitudes until the filter is positive.
  {
    const auto value_at = [&](const EquationParams& e) {
      const PositionWeights w = assemble_positions(e, l.side);
      const PanelPass pass = panel_pass(w, e.s2, e.nu, data, PassLevel::value);
      return pass.negative_count == 0 && pass.n_points > 0;
    };
    bool damped = false;
    for (long tries = 0; tries < 200 && !value_at(eq); ++tries) {
      for (long i = 0; i < p; ++i)
        if (coords[i].xf == Xf::linear) {
          KernelSpec& k = channel_kernel(eq, coords[i].ch);
          if (coords[i].which == 0) k.g *= 0.5;
        }
      damped = true;
    }
    if (!value_at(eq))
      throw NumericalError(
          "parametric stage: no positive-variance starting point");
    if (damped) fit.flags.push_back("parametric_start_damped");
  }

  const Eigen::VectorXd u0 = to_u(pack(eq, coords), xf);
  AscentOptions aopt;
  aopt.max_iterations = options.max_iterations;
  aopt.gradient_tolerance = options.gradient_tolerance;
  const AscentResult res = newton_maximize(fgh, u0, aopt);

  const Eigen::VectorXd th = to_theta(res.x, xf);
  unpack(th, coords, &eq);
  fit.parameter_names = coord_names(coords);
  fit.values = th;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.final_gradient_norm = res.gradient_norm;
  fit.n_points = n_points;
  fit.likelihood = report_at(eq, l, data);
  if (!res.converged) fit.flags.push_back("parametric_not_converged");

  // Observed information in natural coordinates, summed over points.
  {
    std::vector<JacobianColumn> jac;
    const std::vector<Eigen::VectorXd> dw = make_dw(eq);
    for (long i = 0; i < p; ++i) jac.push_back({coords[i].ch, dw[i]});
    const PositionWeights w = assemble_positions(eq, l.side);
    const PanelPass pass =
        panel_pass(w, eq.s2, eq.nu, data, PassLevel::hessian, jac);
    Eigen::MatrixXd hn = Eigen::MatrixXd::Zero(P, P);
    hn.topLeftCorner(p + 1, p + 1) = pass.h_jj;
    for (size_t ci = 0; ci < l.all.size(); ++ci) {
      const Channel ch = l.all[ci];
      std::vector<long> idx;
      for (long i = 0; i < p; ++i)
        if (coords[i].ch == ch) idx.push_back(i);
      const KernelSpec& k = channel_kernel(eq, ch);
      for (size_t a = 0; a < idx.size(); ++a)
        for (size_t b = a; b < idx.size(); ++b) {
          const Eigen::VectorXd d2 = d2weights(
              k, args[ch], coords[idx[a]].which, coords[idx[b]].which);
          const double v = d2.dot(pass.adj[ch]);
          hn(idx[a], idx[b]) += v;
          if (a != b) hn(idx[b], idx[a]) += v;
        }
    }
    hn.block(0, P - 1, p + 1, 1) = pass.h_jnu;
    hn.block(P - 1, 0, 1, p + 1) = pass.h_jnu.transpose();
    hn(P - 1, P - 1) = pass.sum_dnunu;
    fit.hessian = hn;
    fit.stderrs = stderr_from_information(-hn, &fit.flags, "parametric");
  }
  set_kernel_errs(l, coords, fit.stderrs, &eq);

  // A steep power law can absorb the cutoff: alpha above 1 with an
  // omega band through zero marks the pair as jointly ill-determined.
  for (long i = 0; i < p; ++i) {
    if (coords[i].which != 1) continue;
    const KernelSpec& k = channel_kernel(eq, coords[i].ch);
    if (k.alpha > 1.0 && std::isfinite(k.omega_err) &&
        k.omega_err >= k.omega)
      fit.flags.push_back("ill_determined_omega_" +
                          kernel_label(l, coords[i].ch));
  }

  fit.equation = eq;
  if (target == Target::daily) {
    fit.daily.s2 = eq.s2;
    fit.daily.s2_err = eq.s2_err;
    fit.daily.nu = eq.nu;
    fit.daily.nu_err = eq.nu_err;
    fit.daily.K = eq.K_DD;
    fit.daily.L = eq.L_D;
  }
  return fit;
}

// -----------------------------------------------------------------------
// Constrained night stage
// -----------------------------------------------------------------------

namespace {

struct HSums {
  double h = 0, da = 0, dw = 0;
};

HSums h_sums(double alpha, double omega, long q) {
  HSums s;
  for (long tau = 1; tau <= q; ++tau) {
    const double v = std::pow(double(tau), -alpha) * std::exp(-omega * tau);
    s.h += v;
    s.da -= std::log(double(tau)) * v;
    s.dw -= double(tau) * v;
  }
  return s;
}

} // namespace

FitResult mle_night_constrained(const ReturnPanel& panel,
                                const FitResult& start,
                                const CalibrationOptions& options) {
  const TargetLayout l = layout_for(Target::night);
  const long q = start.equation.q();
  const TargetData data = make_target_data(panel, Target::night);

  double c = 2.0 * start.cross_moment *
                 integrated_kernel(start.equation.K_ND) +
             2.0 * start.cross_moment_leading *
                 integrated_kernel(start.equation.K_DN);
  if (c >= 1.0)
    throw NumericalError(
        "zero-baseline constraint infeasible: cross-kernel variance "
        "contribution is " +
        std::to_string(c));

  FitResult fit;
  fit.target = Target::night;
  fit.cross_moment = start.cross_moment;
  fit.cross_moment_leading = start.cross_moment_leading;
  fit.variance_shares = start.variance_shares;

  EquationParams eq = start.equation;
  eq.s2 = 0.0;
  eq.s2_err = 0.0;

  double gamma0 = start.equation.K_DD.g > 0.0
                      ? start.equation.K_NN.g / start.equation.K_DD.g
                      : 1.0;
  if (!(gamma0 > 0.0)) {
    gamma0 = 1.0;
    fit.flags.push_back("constrained_gamma_reset");
  }
  Eigen::VectorXd th0(5);
  th0 << gamma0, std::max(start.equation.K_DD.alpha, 0.01),
      std::max(start.equation.K_DD.omega, 1e-6),
      std::max(start.equation.K_NN.alpha, 0.01),
      std::max(start.equation.K_NN.omega, 1e-6);
  const Eigen::VectorXd u0 = th0.array().log();

  const Eigen::VectorXi args_dd = channel_args(l.side, kDD, q);
  const Eigen::VectorXi args_nn = channel_args(l.side, kNN, q);

  long n_points = 0;
  const GradientObjective fg = [&](const Eigen::VectorXd& u,
                                   Eigen::VectorXd* grad) {
    const Eigen::VectorXd th = u.array().exp();
    const double gamma = th(0), a1 = th(1), w1 = th(2), a2 = th(3),
                 w2 = th(4);
    const HSums h1 = h_sums(a1, w1, q), h2 = h_sums(a2, w2, q);
    const double denom = h1.h + gamma * h2.h;
    const double g1 = (1.0 - c) / denom;
    if (!(g1 > 0.0)) return -kInf;
    const double g2 = gamma * g1;
    eq.K_DD = KernelSpec::power_law(g1, a1, w1, q);
    eq.K_NN = KernelSpec::power_law(g2, a2, w2, q);
    const PositionWeights w = assemble_positions(eq, l.side);
    const PanelPass pass =
        panel_pass(w, eq.s2, eq.nu, data,
                   grad ? PassLevel::gradient : PassLevel::value);
    if (pass.negative_count > 0 || pass.n_points == 0) return -kInf;
    n_points = pass.n_points;
    if (grad) {
      const double G_g1 = dweights(eq.K_DD, args_dd, 0).dot(pass.adj[kDD]);
      const double G_a1 = dweights(eq.K_DD, args_dd, 1).dot(pass.adj[kDD]);
      const double G_w1 = dweights(eq.K_DD, args_dd, 2).dot(pass.adj[kDD]);
      const double G_g2 = dweights(eq.K_NN, args_nn, 0).dot(pass.adj[kNN]);
      const double G_a2 = dweights(eq.K_NN, args_nn, 1).dot(pass.adj[kNN]);
      const double G_w2 = dweights(eq.K_NN, args_nn, 2).dot(pass.adj[kNN]);

      const double dg1_dgamma = -g1 * h2.h / denom;
      const double dg2_dgamma = g1 + gamma * dg1_dgamma;
      const double dg1_da1 = -g1 * h1.da / denom;
      const double dg1_dw1 = -g1 * h1.dw / denom;
      const double dg1_da2 = -g1 * gamma * h2.da / denom;
      const double dg1_dw2 = -g1 * gamma * h2.dw / denom;

      Eigen::VectorXd gn(5);
      gn(0) = G_g1 * dg1_dgamma + G_g2 * dg2_dgamma;
      gn(1) = G_a1 + (G_g1 + G_g2 * gamma) * dg1_da1;
      gn(2) = G_w1 + (G_g1 + G_g2 * gamma) * dg1_dw1;
      gn(3) = G_a2 + (G_g1 + G_g2 * gamma) * dg1_da2;
      gn(4) = G_w2 + (G_g1 + G_g2 * gamma) * dg1_dw2;
      gn /= double(pass.n_points);
      *grad = gn.cwiseProduct(th);  // all coordinates move on logs
    }
    return pass.sum_loglik / pass.n_points;
  };

  // The frozen cross and leverage kernels can leave no valid variance
  // at the starting shapes; shrink them until the start is usable.
  for (long tries = 0; !std::isfinite(fg(u0, nullptr)); ++tries) {
    if (tries >= 200)
      throw NumericalError("constrained fit has no valid starting point");
    eq.K_ND.g *= 0.5;
    eq.K_DN.g *= 0.5;
    eq.L_D.g *= 0.5;
    eq.L_N.g *= 0.5;
    c = 2.0 * start.cross_moment * integrated_kernel(eq.K_ND) +
        2.0 * start.cross_moment_leading * integrated_kernel(eq.K_DN);
    if (tries == 0) fit.flags.push_back("constrained_start_damped");
  }

  AscentOptions aopt;
  aopt.max_iterations = options.max_iterations;
  aopt.gradient_tolerance = options.gradient_tolerance;
  const AscentResult res = lbfgs_maximize(fg, u0, aopt);

  // Rebuild the equation at the optimum.
  {
    Eigen::VectorXd g(5);
    fg(res.x, &g);
  }
  const Eigen::VectorXd th = res.x.array().exp();

  ConstrainedNightSpec spec;
  spec.gamma = th(0);
  spec.alpha1 = th(1);
  spec.omega1 = th(2);
  spec.alpha2 = th(3);
  spec.omega2 = th(4);
  spec.c = c;
  fit.constrained = spec;

  // The shapes were fitted at the starting tail; re-estimate the tail
  // on the final residuals.
  {
    const PositionWeights w = assemble_positions(eq, l.side);
    std::vector<double> xi;
    for (long s = 0; s < data.rd.cols(); ++s) {
      const Eigen::VectorXd sig =
          filter_series(w, eq.s2, data.rd.col(s), data.rn.col(s));
      for (long t = q; t < data.rd.rows(); ++t)
        if (data.mask(t, s) && sig(t) > 0.0)
          xi.push_back(data.target_r(t, s) / std::sqrt(sig(t)));
    }
    const NuEstimate est = estimate_nu(
        Eigen::Map<const Eigen::VectorXd>(xi.data(), long(xi.size())));
    eq.nu = est.nu;
    eq.nu_err = 1.98 * est.stderr_;
    if (est.boundary) fit.flags.push_back("nu_at_boundary");
  }

  fit.equation = eq;
  fit.parameter_names = {"gamma", "alpha_DD_N", "omega_DD_N", "alpha_NN_N",
                         "omega_NN_N"};
  fit.values = th;
  fit.converged = res.converged;
  fit.iterations = res.iterations;
  fit.final_gradient_norm = res.gradient_norm;
  fit.n_points = n_points;
  fit.likelihood = report_at(eq, l, data);
  if (!res.converged) fit.flags.push_back("constrained_not_converged");

  // Central-difference information over the log coordinates, mapped to
  // the natural scale at the optimum.
  {
    const double hstep = 1e-4;
    Eigen::MatrixXd hu(5, 5);
    for (long j = 0; j < 5; ++j) {
      Eigen::VectorXd up = res.x, dn = res.x;
      up(j) += hstep;
      dn(j) -= hstep;
      Eigen::VectorXd gp(5), gm(5);
      fg(up, &gp);
      fg(dn, &gm);
      hu.col(j) = (gp - gm) / (2.0 * hstep);
    }
    hu = 0.5 * (hu + hu.transpose()).eval();
    const Eigen::VectorXd dinv = th.cwiseInverse();
    Eigen::MatrixXd hn =
        dinv.asDiagonal() * hu * dinv.asDiagonal() * double(n_points);
    fit.hessian = hn;
    fit.stderrs = stderr_from_information(-hn, &fit.flags, "constrained");
    fit.equation.K_DD.alpha_err = 1.98 * fit.stderrs(1);
    fit.equation.K_DD.omega_err = 1.98 * fit.stderrs(2);
    fit.equation.K_NN.alpha_err = 1.98 * fit.stderrs(3);
    fit.equation.K_NN.omega_err = 1.98 * fit.stderrs(4);
  }
  return fit;
}

// -----------------------------------------------------------------------

FitResult calibrate_target(const ReturnPanel& panel, Target target,
                           const CalibrationOptions& options) {
  if (options.constrain_s2_zero && target != Target::night)
    throw UsageError("the zero-baseline constraint applies to the night "
                     "equation only");
  std::vector<std::string> flags;
  const TargetLayout l = layout_for(target);
  const TargetData data = make_target_data(panel, target);

  FitResult m0 = moment_init(panel, target, options.q_free, &flags);
  if (!report_at(m0.equation, l, data).valid) {
    EquationParams eq = blank_equation(l, options.q_free);
    eq.nu = m0.equation.nu;
    diagonal_init(l, options.q_free, &eq);
    m0.equation = eq;
    flags.push_back("moment_init_invalid");
  }

  const FitResult free_fit = mle_free(panel, target, m0, options);
  if (!free_fit.converged) flags.push_back("free_stage_not_converged");
  for (const auto& f : free_fit.flags)
    if (f == "free_information_singular") flags.push_back(f);

  const FitResult forms =
      fit_functional_forms(free_fit, options.q, &flags);

  FitResult fit = options.constrain_s2_zero
                      ? mle_night_constrained(panel, forms, options)
                      : mle_parametric(panel, target, forms, options);
  // Earlier-stage flags ride along on the final result.
  std::vector<std::string> merged = flags;
  merged.insert(merged.end(), fit.flags.begin(), fit.flags.end());
  fit.flags = std::move(merged);
  return fit;
}

// -----------------------------------------------------------------------

NuEstimate estimate_nu(const Eigen::VectorXd& residuals) {
  const long n = residuals.size();
  if (n == 0) throw DataError("tail estimation needs residuals");
  const auto value = [&](double nu) {
    double s = 0;
    for (long i = 0; i < n; ++i)
      s += student_loglik_eq7(1.0, residuals(i), nu);
    return s / n + student_constant(nu);
  };
  const double lo = std::log(0.02), hi = std::log(198.0);
  const double u =
      golden_max([&](double x) { return value(2.0 + std::exp(x)); }, lo, hi,
                 1e-9);
  NuEstimate est;
  est.nu = 2.0 + std::exp(u);
  est.n = n;
  est.boundary = est.nu <= 2.05 || est.nu >= 150.0;
  double info = 0;
  for (long i = 0; i < n; ++i)
    info -= student_derivs(1.0, residuals(i), est.nu).dnunu;
  est.stderr_ = info > 0.0 ? 1.0 / std::sqrt(info) : kNaN;
  return est;
}

// -----------------------------------------------------------------------
// Fit documents
// -----------------------------------------------------------------------

namespace {

using nlohmann::json;

json vector_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (long i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

Eigen::VectorXd vector_from_json(const json& a) {
  Eigen::VectorXd v(long(a.size()));
  for (size_t i = 0; i < a.size(); ++i)
    v(long(i)) = a[i].is_number() ? a[i].get<double>() : kNaN;
  return v;
}

} // namespace

std::string to_json(const FitResult& fit) {
  json j;
  j["target"] = target_name(fit.target);
  json model;
  if (fit.target == Target::daily) {
    model = json::parse(to_json(fit.daily));
  } else {
    model = json::parse(to_json(fit.equation));
    model["side"] = side_name(fit.target == Target::day ? Side::day
                                                        : Side::night);
    model["cross_moment"] = fit.cross_moment;
    model["cross_moment_leading"] = fit.cross_moment_leading;
    model["variance_shares"] = {fit.variance_shares(0),
                                fit.variance_shares(1)};
  }
  j["model"] = model;
  if (fit.constrained) {
    const ConstrainedNightSpec& s = *fit.constrained;
    j["constrained"] = {{"gamma", s.gamma},   {"alpha1", s.alpha1},
                        {"omega1", s.omega1}, {"alpha2", s.alpha2},
                        {"omega2", s.omega2}, {"c", s.c}};
  }
  json f;
  f["parameter_names"] = fit.parameter_names;
  f["values"] = vector_to_json(fit.values);
  f["stderrs"] = vector_to_json(fit.stderrs);
  if (fit.hessian.size() > 0) {
    json h = json::array();
    for (long r = 0; r < fit.hessian.rows(); ++r)
      h.push_back(vector_to_json(fit.hessian.row(r)));
    f["hessian"] = h;
  }
  f["n_points"] = fit.n_points;
  f["converged"] = fit.converged;
  f["iterations"] = fit.iterations;
  f["final_gradient_norm"] = fit.final_gradient_norm;
  f["loglik_per_point"] = fit.likelihood.loglik_per_point;
  f["loglik_per_point_eq7"] = fit.likelihood.loglik_per_point_eq7;
  f["negative_variance_count"] = fit.likelihood.negative_variance_count;
  f["flags"] = fit.flags;
  j["fit"] = f;
  return j.dump(2) + "\n";
}

FitResult fit_from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object() || !j.contains("fit") ||
      !j.contains("model"))
    throw DataError("not a calibration result document");
  FitResult fit;
  fit.target = target_from_name(j.at("target").get<std::string>());
  const std::string model_text = j.at("model").dump();
  if (fit.target == Target::daily) {
    fit.daily = daily_arch_from_json(model_text);
    // The shared layout keeps the equation view usable for daily fits.
    fit.equation.s2 = fit.daily.s2;
    fit.equation.s2_err = fit.daily.s2_err;
    fit.equation.nu = fit.daily.nu;
    fit.equation.nu_err = fit.daily.nu_err;
    fit.equation.K_DD = fit.daily.K;
    fit.equation.L_D = fit.daily.L;
    fit.equation.K_NN = KernelSpec::zero(fit.daily.q());
    fit.equation.K_ND = KernelSpec::zero(fit.daily.q());
    fit.equation.K_DN = KernelSpec::zero(fit.daily.q());
    fit.equation.L_N = KernelSpec::zero(fit.daily.q());
  } else {
    fit.equation = equation_from_json(model_text);
    const json& m = j.at("model");
    fit.cross_moment = m.value("cross_moment", 0.0);
    fit.cross_moment_leading = m.value("cross_moment_leading", 0.0);
    if (m.contains("variance_shares")) {
      const auto v = m.at("variance_shares").get<std::vector<double>>();
      if (v.size() == 2) fit.variance_shares << v[0], v[1];
    }
  }
  if (j.contains("constrained")) {
    const json& s = j.at("constrained");
    ConstrainedNightSpec spec;
    spec.gamma = s.at("gamma").get<double>();
    spec.alpha1 = s.at("alpha1").get<double>();
    spec.omega1 = s.at("omega1").get<double>();
    spec.alpha2 = s.at("alpha2").get<double>();
    spec.omega2 = s.at("omega2").get<double>();
    spec.c = s.at("c").get<double>();
    fit.constrained = spec;
  }
  const json& f = j.at("fit");
  fit.parameter_names = f.at("parameter_names").get<std::vector<std::string>>();
  fit.values = vector_from_json(f.at("values"));
  fit.stderrs = vector_from_json(f.at("stderrs"));
  if (f.contains("hessian")) {
    const json& h = f.at("hessian");
    fit.hessian.resize(long(h.size()), long(h.size()));
    for (size_t r = 0; r < h.size(); ++r)
      fit.hessian.row(long(r)) = vector_from_json(h[r]).transpose();
  }
  fit.n_points = f.at("n_points").get<long>();
  fit.converged = f.at("converged").get<bool>();
  fit.iterations = f.at("iterations").get<long>();
  fit.final_gradient_norm = f.at("final_gradient_norm").get<double>();
  fit.likelihood.loglik_per_point = f.at("loglik_per_point").get<double>();
  fit.likelihood.loglik_per_point_eq7 =
      f.at("loglik_per_point_eq7").get<double>();
  fit.likelihood.negative_variance_count =
      f.at("negative_variance_count").get<long>();
  fit.likelihood.n_points = fit.n_points;
  fit.likelihood.valid = fit.likelihood.negative_variance_count == 0;
  fit.flags = f.at("flags").get<std::vector<std::string>>();
  return fit;
}

FitResult read_fit(const std::string& path) {
  return fit_from_json(read_text(path));
}

void write_fit(const FitResult& fit, const std::string& path) {
  write_text_atomic(path, to_json(fit));
}

} // namespace onarch
