#include "onarch/evaluate.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "onarch/errors.hpp"
#include "onarch/filter.hpp"
#include "onarch/likelihood.hpp"
#include "onarch/manifest.hpp"
#include "onarch/special.hpp"
#include "onarch/threads.hpp"

namespace onarch {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

EquationParams lift_daily(const DailyArchParams& p) {
  EquationParams eq;
  eq.s2 = p.s2;
  eq.s2_err = p.s2_err;
  eq.nu = p.nu;
  eq.nu_err = p.nu_err;
  eq.K_DD = p.K;
  eq.L_D = p.L;
  const long q = p.q();
  eq.K_NN = KernelSpec::zero(q);
  eq.K_ND = KernelSpec::zero(q);
  eq.K_DN = KernelSpec::zero(q);
  eq.L_N = KernelSpec::zero(q);
  return eq;
}

} // namespace

// -----------------------------------------------------------------------
// Residuals
// -----------------------------------------------------------------------

ResidualSeries extract_residual_series(const EquationParams& params,
                                       Target target,
                                       const ReturnPanel& panel) {
  const TargetData data = make_target_data(panel, target);
  const Side side = target == Target::day ? Side::day : Side::night;
  const PositionWeights w = assemble_positions(params, side);
  const long q = params.q(), T = data.rd.rows(), N = data.rd.cols();
  if (T <= q) throw DataError("panel too short for the model horizon");

  ResidualSeries res;
  res.label = target_name(target);
  res.xi = Eigen::MatrixXd::Constant(T, N, kNaN);

  parallel_over(N, [&](long s) {
    const Eigen::VectorXd sig =
        filter_series(w, params.s2, data.rd.col(s), data.rn.col(s));
    for (long t = q; t < T; ++t) {
      if (!data.mask(t, s)) continue;
      if (!(sig(t) > 0.0))
        throw NumericalError("nonpositive filtered variance at date " +
                             std::to_string(t) + ", stock " +
                             std::to_string(s));
      res.xi(t, s) = data.target_r(t, s) / std::sqrt(sig(t));
    }
  });

  std::vector<double> pooled;
  for (long s = 0; s < N; ++s)
    for (long t = q; t < T; ++t)
      if (std::isfinite(res.xi(t, s))) pooled.push_back(res.xi(t, s));
  res.n = long(pooled.size());
  if (res.n == 0) throw DataError("no evaluated points for residuals");
  res.pooled =
      Eigen::Map<const Eigen::VectorXd>(pooled.data(), res.n);

  res.mean = res.pooled.mean();
  res.mean_square = res.pooled.squaredNorm() / double(res.n);
  const double m4 = res.pooled.array().pow(4).mean();
  res.kurtosis = res.mean_square > 0.0
                     ? m4 / (res.mean_square * res.mean_square)
                     : 0.0;
  const double amax = res.pooled.cwiseAbs().maxCoeff();
  res.degenerate = amax == 0.0;

  if (!res.degenerate) {
    res.nu_fit = estimate_nu(res.pooled);
    res.kurtosis_divergent = res.nu_fit.nu <= 4.0;
  } else {
    res.nu_fit.nu = kNaN;
    res.nu_fit.stderr_ = kNaN;
    res.nu_fit.n = res.n;
  }

  double lo = 1e-3, hi = 1.0;
  if (!res.degenerate) {
    hi = amax;
    double minpos = hi;
    for (long i = 0; i < res.n; ++i) {
      const double a = std::abs(res.pooled(i));
      if (a > 0.0 && a < minpos) minpos = a;
    }
    lo = std::max(minpos, hi * 1e-4);
    if (lo >= hi) lo = hi / 10.0;
  }
  const long kGrid = 50;
  res.cdf_table.resize(kGrid, 2);
  const double step = std::log(hi / lo) / double(kGrid - 1);
  for (long i = 0; i < kGrid; ++i) {
    const double y = lo * std::exp(step * double(i));
    long above = 0;
    for (long j = 0; j < res.n; ++j)
      if (std::abs(res.pooled(j)) > y) ++above;
    res.cdf_table(i, 0) = y;
    res.cdf_table(i, 1) = double(above) / double(res.n);
  }
  return res;
}

ResidualDiagnostics extract_residuals(const BivariateModel& model,
                                      const ReturnPanel& panel) {
  ResidualDiagnostics d;
  d.series.push_back(
      extract_residual_series(model.day, Target::day, panel));
  d.series.push_back(
      extract_residual_series(model.night, Target::night, panel));
  return d;
}

ResidualDiagnostics extract_residuals(const DailyArchParams& params,
                                      const ReturnPanel& panel) {
  ResidualDiagnostics d;
  d.series.push_back(
      extract_residual_series(lift_daily(params), Target::daily, panel));
  return d;
}

// -----------------------------------------------------------------------
// Baseline ratios
// -----------------------------------------------------------------------

namespace {

double baseline_ratio_of(const Eigen::MatrixXd& sigma2,
                         const MaskMatrix& mask, long warmup, double s2) {
  double sum = 0.0;
  long n = 0;
  for (long s = 0; s < sigma2.cols(); ++s)
    for (long t = warmup; t < sigma2.rows(); ++t)
      if (mask(t, s)) {
        sum += sigma2(t, s);
        ++n;
      }
  if (n == 0 || sum <= 0.0) return kNaN;
  return s2 / (sum / double(n));
}

} // namespace

BaselineRatioReport baseline_ratios(const BivariateModel& model,
                                    const ReturnPanel& panel) {
  const BivariateFilterResult f = filter_volatility(model, panel);
  BaselineRatioReport rep;
  rep.rD_ratio = baseline_ratio_of(f.day.sigma2, panel.valid_d,
                                   f.day.warmup, model.day.s2);
  rep.rN_ratio = baseline_ratio_of(f.night.sigma2, panel.valid_n,
                                   f.night.warmup, model.night.s2);
  rep.feedback_D = 1.0 - rep.rD_ratio;
  rep.feedback_N = 1.0 - rep.rN_ratio;
  return rep;
}

double baseline_ratio(const DailyArchParams& params,
                      const ReturnPanel& panel) {
  const FilterResult f = filter_daily_arch(params, panel);
  return baseline_ratio_of(f.sigma2, panel.valid_r, f.warmup, params.s2);
}

// -----------------------------------------------------------------------
// Share map
// -----------------------------------------------------------------------

std::pair<Eigen::MatrixXd, Eigen::MatrixXd> equivalent_vols_daily_to_bivariate(
    const Eigen::MatrixXd& sigma2_daily, const Eigen::Vector2d& shares) {
  return {shares(0) * sigma2_daily, shares(1) * sigma2_daily};
}

Eigen::MatrixXd equivalent_vol_bivariate_to_daily(
    const Eigen::MatrixXd& sigma2_d, const Eigen::MatrixXd& sigma2_n,
    double cross_moment) {
  return sigma2_d + sigma2_n +
         Eigen::MatrixXd::Constant(sigma2_d.rows(), sigma2_d.cols(),
                                   2.0 * cross_moment);
}

// -----------------------------------------------------------------------
// In/out-of-sample comparison
// -----------------------------------------------------------------------

namespace {

ReturnPanel subpanel(const ReturnPanel& panel,
                     const std::vector<long>& idx) {
  ReturnPanel sub;
  sub.dates = panel.dates;
  sub.gap_overnights = panel.gap_overnights;
  const long T = panel.n_dates(), N = long(idx.size());
  sub.rd.resize(T, N);
  sub.rn.resize(T, N);
  sub.r.resize(T, N);
  sub.valid_d.resize(T, N);
  sub.valid_n.resize(T, N);
  sub.valid_r.resize(T, N);
  for (long c = 0; c < N; ++c) {
    const long s = idx[c];
    sub.tickers.push_back(panel.tickers[s]);
    sub.rd.col(c) = panel.rd.col(s);
    sub.rn.col(c) = panel.rn.col(s);
    sub.r.col(c) = panel.r.col(s);
    sub.valid_d.col(c) = panel.valid_d.col(s);
    sub.valid_n.col(c) = panel.valid_n.col(s);
    sub.valid_r.col(c) = panel.valid_r.col(s);
  }
  const NormalizationRecord& nr = panel.normalization;
  if (nr.applied) {
    NormalizationRecord& sr = sub.normalization;
    sr.applied = true;
    sr.mean_d.resize(N);
    sr.mean_n.resize(N);
    sr.hist_d.resize(N);
    sr.hist_n.resize(N);
    sr.dispersion_d.resize(T, N);
    sr.dispersion_n.resize(T, N);
    for (long c = 0; c < N; ++c) {
      const long s = idx[c];
      sr.mean_d(c) = nr.mean_d(s);
      sr.mean_n(c) = nr.mean_n(s);
      sr.hist_d(c) = nr.hist_d(s);
      sr.hist_n(c) = nr.hist_n(s);
      sr.dispersion_d.col(c) = nr.dispersion_d.col(s);
      sr.dispersion_n.col(c) = nr.dispersion_n.col(s);
    }
  }
  return sub;
}

struct MeanLoglik {
  double mean = kNaN;
  long n = 0;
  long skipped = 0;
};

MeanLoglik student_panel_mean(const Eigen::MatrixXd& sigma2,
                              const Eigen::MatrixXd& x,
                              const MaskMatrix& mask, long warmup,
                              double nu) {
  MeanLoglik m;
  double sum = 0.0;
  for (long s = 0; s < sigma2.cols(); ++s)
    for (long t = warmup; t < sigma2.rows(); ++t) {
      if (!mask(t, s)) continue;
      const double sig = sigma2(t, s);
      if (!(sig > 0.0) || !std::isfinite(sig)) {
        ++m.skipped;
        continue;
      }
      sum += student_loglik(sig, x(t, s), nu);
      ++m.n;
    }
  if (m.n > 0) m.mean = sum / double(m.n);
  return m;
}

FitResult calibrate_with_context(const ReturnPanel& half, Target target,
                                 const CalibrationOptions& options,
                                 const std::string& context) {
  try {
    return calibrate_target(half, target, options);
  } catch (const std::exception& e) {
    throw NumericalError(context + ": " + e.what());
  }
}

} // namespace

ISOSReport isos_compare(const ReturnPanel& panel, long q, std::uint64_t seed,
                        const CalibrationOptions& options) {
  const long N = panel.n_stocks();
  if (N < 4) throw DataError("half-pool comparison needs >= 4 stocks");

  ISOSReport rep;
  rep.q = q;
  rep.seed = seed;

  // Hash split: reproducible, independent of column order.
  std::vector<long> order(N);
  for (long s = 0; s < N; ++s) order[s] = s;
  std::vector<std::uint64_t> key(N);
  for (long s = 0; s < N; ++s) {
    const std::string k = panel.tickers[s] + ":" + std::to_string(seed);
    key[s] = fnv1a64(k.data(), k.size());
  }
  std::sort(order.begin(), order.end(), [&](long a, long b) {
    if (key[a] != key[b]) return key[a] < key[b];
    return panel.tickers[a] < panel.tickers[b];
  });
  const long n1 = (N + 1) / 2;
  std::vector<long> idx1(order.begin(), order.begin() + n1);
  std::vector<long> idx2(order.begin() + n1, order.end());
  const ReturnPanel halves[2] = {subpanel(panel, idx1),
                                 subpanel(panel, idx2)};
  for (long s : idx1) rep.half1.push_back(panel.tickers[s]);
  for (long s : idx2) rep.half2.push_back(panel.tickers[s]);

  CalibrationOptions opt = options;
  opt.q = q;
  opt.q_free = std::min(options.q_free, q);

  FitResult day_fit[2], night_fit[2], daily_fit[2];
  for (int h = 0; h < 2; ++h) {
    const std::string tag = "half" + std::to_string(h + 1);
    CalibrationOptions day_opt = opt;
    day_opt.constrain_s2_zero = false;
    day_fit[h] = calibrate_with_context(halves[h], Target::day, day_opt,
                                        tag + " day calibration");
    CalibrationOptions night_opt = opt;
    night_opt.constrain_s2_zero = true;
    night_fit[h] = calibrate_with_context(halves[h], Target::night,
                                          night_opt,
                                          tag + " night calibration");
    daily_fit[h] = calibrate_with_context(halves[h], Target::daily, day_opt,
                                          tag + " daily calibration");
    for (const auto& f : day_fit[h].flags)
      rep.flags.push_back(tag + "_day_" + f);
    for (const auto& f : night_fit[h].flags)
      rep.flags.push_back(tag + "_night_" + f);
    for (const auto& f : daily_fit[h].flags)
      rep.flags.push_back(tag + "_daily_" + f);
  }

  // Variance grids: model of half h filtered over data half g.
  Eigen::MatrixXd sig_d[2][2], sig_n[2][2], sig_a[2][2];
  for (int h = 0; h < 2; ++h)
    for (int g = 0; g < 2; ++g) {
      sig_d[h][g] =
          filter_equation(day_fit[h].equation, Side::day, halves[g]).sigma2;
      sig_n[h][g] =
          filter_equation(night_fit[h].equation, Side::night, halves[g])
              .sigma2;
      sig_a[h][g] = filter_daily_arch(daily_fit[h].daily, halves[g]).sigma2;
    }

  const auto alpp = [](const MeanLoglik& m) {
    return 100.0 * std::exp(m.mean);
  };

  // One grid cell: variance matrices by (model half, data half), the
  // density's tail parameter per model half, and the target stream.
  const auto make_cell = [&](const std::string& prediction,
                             const std::string& model, bool derived,
                             const auto& sigma_of, const auto& nu_of,
                             const auto& x_of, const auto& mask_of) {
    ISOSCell cell;
    cell.prediction = prediction;
    cell.model = model;
    cell.derived = derived;
    for (int h = 0; h < 2; ++h)
      for (int g = 0; g < 2; ++g) {
        const MeanLoglik m = student_panel_mean(
            sigma_of(h, g), x_of(g), mask_of(g), q, nu_of(h));
        cell.skipped += m.skipped;
        (g == h ? cell.is_half : cell.os_half)(h) = alpp(m);
      }
    cell.l_is = 0.5 * (cell.is_half(0) + cell.is_half(1));
    cell.l_os = 0.5 * (cell.os_half(0) + cell.os_half(1));
    return cell;
  };

  const auto rd_of = [&](int g) -> const Eigen::MatrixXd& {
    return halves[g].rd;
  };
  const auto rn_of = [&](int g) -> const Eigen::MatrixXd& {
    return halves[g].rn;
  };
  const auto r_of = [&](int g) -> const Eigen::MatrixXd& {
    return halves[g].r;
  };
  const auto mask_d = [&](int g) -> const MaskMatrix& {
    return halves[g].valid_d;
  };
  const auto mask_n = [&](int g) -> const MaskMatrix& {
    return halves[g].valid_n;
  };
  const auto mask_r = [&](int g) -> const MaskMatrix& {
    return halves[g].valid_r;
  };

  rep.cells.push_back(make_cell(
      "day", "bivariate", false,
      [&](int h, int g) { return sig_d[h][g]; },
      [&](int h) { return day_fit[h].equation.nu; }, rd_of, mask_d));
  rep.cells.push_back(make_cell(
      "day", "daily-arch", true,
      [&](int h, int g) {
        return equivalent_vols_daily_to_bivariate(
                   sig_a[h][g], day_fit[h].variance_shares)
            .first;
      },
      [&](int h) { return day_fit[h].equation.nu; }, rd_of, mask_d));
  rep.cells.push_back(make_cell(
      "night", "bivariate", false,
      [&](int h, int g) { return sig_n[h][g]; },
      [&](int h) { return night_fit[h].equation.nu; }, rn_of, mask_n));
  rep.cells.push_back(make_cell(
      "night", "daily-arch", true,
      [&](int h, int g) {
        return equivalent_vols_daily_to_bivariate(
                   sig_a[h][g], day_fit[h].variance_shares)
            .second;
      },
      [&](int h) { return night_fit[h].equation.nu; }, rn_of, mask_n));
  rep.cells.push_back(make_cell(
      "daily", "bivariate", true,
      [&](int h, int g) {
        return equivalent_vol_bivariate_to_daily(
            sig_d[h][g], sig_n[h][g], day_fit[h].cross_moment);
      },
      [&](int h) { return daily_fit[h].daily.nu; }, r_of, mask_r));
  rep.cells.push_back(make_cell(
      "daily", "daily-arch", false,
      [&](int h, int g) { return sig_a[h][g]; },
      [&](int h) { return daily_fit[h].daily.nu; }, r_of, mask_r));
  return rep;
}

// -----------------------------------------------------------------------
// Wald test
// -----------------------------------------------------------------------

namespace {

// Pseudo-inverse of an information matrix; flags rank deficiency.
Eigen::MatrixXd pinv_psd(const Eigen::MatrixXd& m, bool* deficient) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  const Eigen::VectorXd& lam = es.eigenvalues();
  const double thresh =
      1e-10 * std::max(lam.size() ? lam.cwiseAbs().maxCoeff() : 0.0, 1e-300);
  Eigen::VectorXd inv(lam.size());
  *deficient = false;
  for (long i = 0; i < lam.size(); ++i) {
    if (lam(i) <= thresh) {
      inv(i) = 0.0;
      *deficient = true;
    } else {
      inv(i) = 1.0 / lam(i);
    }
  }
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

} // namespace

WaldReport wald_universality(const FitResult& fit1, const FitResult& fit2,
                             const std::vector<std::string>& exclude) {
  if (fit1.parameter_names != fit2.parameter_names)
    throw DataError("parameter vectors are not comparable");
  const long P = long(fit1.parameter_names.size());
  if (fit1.values.size() != P || fit2.values.size() != P)
    throw DataError("fit document lacks parameter values");
  if (fit1.hessian.rows() != P || fit2.hessian.rows() != P)
    throw DataError("fit document lacks an information matrix");

  WaldReport rep;
  rep.excluded = exclude;
  rep.n1 = fit1.n_points;
  rep.n2 = fit2.n_points;

  std::vector<long> tested;
  for (long i = 0; i < P; ++i) {
    const std::string& name = fit1.parameter_names[i];
    if (std::find(exclude.begin(), exclude.end(), name) == exclude.end()) {
      tested.push_back(i);
      rep.tested.push_back(name);
    }
  }
  const long k = long(tested.size());
  if (k == 0) throw UsageError("every parameter is excluded from the test");
  rep.dof = k;

  bool def1 = false, def2 = false;
  const Eigen::MatrixXd cov =
      pinv_psd(-fit1.hessian, &def1) + pinv_psd(-fit2.hessian, &def2);
  if (def1) rep.flags.push_back("fit1_information_singular");
  if (def2) rep.flags.push_back("fit2_information_singular");

  rep.theta1.resize(k);
  rep.theta2.resize(k);
  rep.difference.resize(k);
  rep.relative_difference.resize(k);
  Eigen::MatrixXd cov_f(k, k);
  for (long a = 0; a < k; ++a) {
    rep.theta1(a) = fit1.values(tested[a]);
    rep.theta2(a) = fit2.values(tested[a]);
    rep.difference(a) = rep.theta1(a) - rep.theta2(a);
    const double denom =
        std::max(std::abs(rep.theta1(a)), std::abs(rep.theta2(a)));
    rep.relative_difference(a) =
        denom > 0.0 ? std::abs(rep.difference(a)) / denom : 0.0;
    for (long b = 0; b < k; ++b) cov_f(a, b) = cov(tested[a], tested[b]);
  }

  bool def_cov = false;
  const Eigen::MatrixXd cov_inv = pinv_psd(cov_f, &def_cov);
  if (def_cov) rep.flags.push_back("covariance_singular");
  rep.xi_n = std::max(0.0, rep.difference.dot(cov_inv * rep.difference));
  rep.p_value = chi2_sf(rep.xi_n, double(k));
  return rep;
}

// -----------------------------------------------------------------------
// Serialization
// -----------------------------------------------------------------------

std::string cdf_to_csv(const Eigen::MatrixXd& cdf_table) {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,p_exceed\n";
  for (long i = 0; i < cdf_table.rows(); ++i)
    out << cdf_table(i, 0) << "," << cdf_table(i, 1) << "\n";
  return out.str();
}

namespace {

using nlohmann::json;

json cdf_json(const Eigen::MatrixXd& cdf) {
  json a = json::array();
  for (long i = 0; i < cdf.rows(); ++i)
    a.push_back({cdf(i, 0), cdf(i, 1)});
  return a;
}

json series_json(const ResidualSeries& s) {
  json j;
  j["label"] = s.label;
  j["n"] = s.n;
  j["mean"] = s.mean;
  j["mean_square"] = s.mean_square;
  j["kurtosis"] = s.kurtosis;
  j["kurtosis_divergent"] = s.kurtosis_divergent;
  j["degenerate"] = s.degenerate;
  j["nu"] = s.nu_fit.nu;
  j["nu_stderr"] = s.nu_fit.stderr_;
  j["nu_boundary"] = s.nu_fit.boundary;
  j["cdf"] = cdf_json(s.cdf_table);
  return j;
}

} // namespace

std::string to_json(const ResidualDiagnostics& diagnostics) {
  json j;
  j["series"] = json::array();
  for (const auto& s : diagnostics.series) j["series"].push_back(series_json(s));
  return j.dump(2) + "\n";
}

std::string to_json(const BaselineRatioReport& report) {
  json j;
  j["rD_ratio"] = report.rD_ratio;
  j["rN_ratio"] = report.rN_ratio;
  j["feedback_D"] = report.feedback_D;
  j["feedback_N"] = report.feedback_N;
  return j.dump(2) + "\n";
}

std::string to_json(const ISOSReport& report) {
  json j;
  j["q"] = report.q;
  j["seed"] = report.seed;
  j["half1"] = report.half1;
  j["half2"] = report.half2;
  j["cells"] = json::array();
  for (const auto& c : report.cells) {
    json cj;
    cj["prediction"] = c.prediction;
    cj["model"] = c.model;
    cj["derived"] = c.derived;
    cj["l_is"] = c.l_is;
    cj["l_os"] = c.l_os;
    cj["is_half"] = {c.is_half(0), c.is_half(1)};
    cj["os_half"] = {c.os_half(0), c.os_half(1)};
    cj["skipped"] = c.skipped;
    j["cells"].push_back(cj);
  }
  j["flags"] = report.flags;
  return j.dump(2) + "\n";
}

std::string to_json(const WaldReport& report) {
  json j;
  j["xi_n"] = report.xi_n;
  j["dof"] = report.dof;
  j["p_value"] = report.p_value;
  j["excluded"] = report.excluded;
  j["n1"] = report.n1;
  j["n2"] = report.n2;
  j["parameters"] = json::array();
  for (size_t i = 0; i < report.tested.size(); ++i) {
    json p;
    p["name"] = report.tested[i];
    p["value1"] = report.theta1(long(i));
    p["value2"] = report.theta2(long(i));
    p["difference"] = report.difference(long(i));
    p["relative_difference"] = report.relative_difference(long(i));
    j["parameters"].push_back(p);
  }
  j["flags"] = report.flags;
  return j.dump(2) + "\n";
}

} // namespace onarch
