// onarch: batch front end for the two-stream feedback volatility model.
// Subcommands cover the full pipeline: ingest prices into normalized
// return panels, simulate panels from parameter files, calibrate the
// three likelihood targets, check validity (stability + positivity),
// run the in/out-of-sample comparison and the parameter-equality test,
// and bundle per-model diagnostics. Every output carries the manifest
// of the run that produced it (inline for JSON, sidecar for CSV).

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "onarch/calibrate.hpp"
#include "onarch/errors.hpp"
#include "onarch/evaluate.hpp"
#include "onarch/io.hpp"
#include "onarch/manifest.hpp"
#include "onarch/model.hpp"
#include "onarch/ohlc.hpp"
#include "onarch/returns.hpp"
#include "onarch/simulate.hpp"
#include "onarch/threads.hpp"
#include "onarch/validity.hpp"

namespace {

using nlohmann::json;
using namespace onarch;

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

class ManifestBuilder {
 public:
  ManifestBuilder(std::string subcommand, std::vector<std::string> argv) {
    manifest_.subcommand = std::move(subcommand);
    manifest_.argv = std::move(argv);
  }

  void input(const std::string& path) {
    manifest_.inputs[path] = file_hash(path);
  }
  void option(const std::string& key, const std::string& value) {
    manifest_.options[key] = value;
  }
  void option(const std::string& key, const char* value) {
    manifest_.options[key] = value;
  }
  void option(const std::string& key, double value) {
    manifest_.options[key] = format_double(value);
  }
  void option(const std::string& key, long value) {
    manifest_.options[key] = std::to_string(value);
  }
  void option(const std::string& key, bool value) {
    manifest_.options[key] = value ? "true" : "false";
  }
  void seed(std::uint64_t s) {
    manifest_.has_seed = true;
    manifest_.seed = s;
  }

  json finish() { return json::parse(manifest_to_json(manifest_)); }

 private:
  RunManifest manifest_;
};

void write_json_output(const std::string& path, json payload,
                       ManifestBuilder* manifest) {
  payload["manifest"] = manifest->finish();
  write_text_atomic(path, payload.dump(2) + "\n");
}

void write_csv_manifest(const std::string& out, ManifestBuilder* manifest) {
  write_text_atomic(out + ".manifest.json",
                    manifest->finish().dump(2) + "\n");
}

// ---------------------------------------------------------------------
// validity serialization (CLI-facing JSON views of the report structs)

json to_json_obj(const StabilityReport& s) {
  json j;
  j["matrix"] = {{s.k_dd_day, s.k_nn_day}, {s.k_dd_night, s.k_nn_night}};
  j["lambda1"] = s.lambda1;
  j["lambda2"] = s.lambda2;
  j["complex_pair"] = s.complex_pair;
  j["stable"] = s.stable;
  j["fixed_point"] = {s.fixed_point(0), s.fixed_point(1)};
  return j;
}

json to_json_obj(const PositivityReport& p) {
  json j;
  j["single"] = {{"applicable", p.single.applicable},
                 {"pass", p.single.pass},
                 {"failing_lags", p.single.failing_lags}};
  j["double"] = {{"diagonal_ok", p.double_kernel.diagonal_ok},
                 {"pass", p.double_kernel.pass},
                 {"margin", p.double_kernel.margin},
                 {"beta", p.double_kernel.beta},
                 {"tightness", p.double_kernel.tightness}};
  j["leverage"] = {{"applicable", p.leverage.applicable},
                   {"pass", p.leverage.pass},
                   {"value", p.leverage.value},
                   {"bound", p.leverage.bound},
                   {"deflated", p.leverage.deflated}};
  j["min_eigenvalue_K"] = p.min_eigenvalue_K;
  j["min_eigenvalue_M"] = p.min_eigenvalue_M;
  j["overall"] = p.overall;
  return j;
}

const char* pass_word(bool pass) { return pass ? "pass" : "FAIL"; }

// ---------------------------------------------------------------------
// subcommand runners

struct IngestArgs {
  std::vector<std::string> prices;
  std::string out;
  bool raw = false;
  std::string normalization_out;
};

void run_ingest(const IngestArgs& a, ManifestBuilder* mb) {
  const OhlcPanel prices = ingest_ohlc(a.prices);
  for (const auto& p : a.prices) mb->input(p);
  ReturnPanel panel = compute_returns(prices);
  mb->option("normalize", !a.raw);
  if (!a.raw) {
    panel = normalize_panel(panel);
    const std::string norm_out = a.normalization_out.empty()
                                     ? a.out + ".normalization.json"
                                     : a.normalization_out;
    write_normalization(norm_out, panel);
    mb->option("normalization_out", norm_out);
  }
  write_return_panel(a.out, panel);
  write_csv_manifest(a.out, mb);
  std::cout << "ingested " << panel.n_stocks() << " stocks x "
            << panel.n_dates() << " dates -> " << a.out;
  if (panel.gap_overnights > 0)
    std::cout << " (" << panel.gap_overnights << " long-gap overnights)";
  std::cout << "\n";
}

struct SimulateArgs {
  std::string model, night, out;
  long stocks = 1, days = 250, burn_in = -1;
  std::uint64_t seed = 0;
  bool force = false, allow_negative = false;
};

void run_simulate(const SimulateArgs& a, ManifestBuilder* mb) {
  mb->input(a.model);
  mb->option("stocks", a.stocks);
  mb->option("days", a.days);
  mb->option("burn_in", a.burn_in);
  mb->option("force", a.force);
  mb->option("allow_negative", a.allow_negative);
  mb->seed(a.seed);

  SimConfig config;
  config.n_stocks = a.stocks;
  config.horizon = a.days;
  config.seed = a.seed;
  config.burn_in = a.burn_in;
  config.force = a.force;
  config.abort_on_negative = !a.allow_negative;

  const ModelKind kind = classify_model_document(read_text(a.model));
  SimResult res;
  if (kind == ModelKind::daily_arch) {
    if (!a.night.empty())
      throw UsageError("--night does not apply to a single-stream model");
    res = simulate_panel(read_daily_arch(a.model), config);
  } else if (kind == ModelKind::bivariate) {
    res = simulate_panel(read_bivariate_model(a.model), config);
  } else {
    if (a.night.empty())
      throw UsageError(
          "a single-equation file needs its companion via --night");
    mb->input(a.night);
    res = simulate_panel(read_bivariate_model(a.model, a.night), config);
  }

  write_return_panel(a.out, res.panel);
  write_csv_manifest(a.out, mb);
  std::cout << "simulated " << res.panel.n_stocks() << " stocks x "
            << res.panel.n_dates() << " days -> " << a.out << "\n";
  if (res.burnin_floored > 0)
    std::cout << "burn-in variance floored " << res.burnin_floored
              << " times\n";
  if (res.negative_count > 0)
    std::cout << "emitted " << res.negative_count
              << " zero returns at negative variances\n";
}

struct CalibrateArgs {
  std::string panel, target = "day", out;
  long q_free = 63, q = 512;
  long max_iterations = 500, max_iterations_free = 300;
  double tolerance = 1e-6;
  bool constrain_s2_zero = false;
};

void run_calibrate(const CalibrateArgs& a, ManifestBuilder* mb) {
  mb->input(a.panel);
  mb->option("target", a.target);
  mb->option("q_free", a.q_free);
  mb->option("q", a.q);
  mb->option("constrain_s2_zero", a.constrain_s2_zero);
  mb->option("tolerance", a.tolerance);

  const ReturnPanel panel = read_return_panel(a.panel);
  CalibrationOptions options;
  options.q_free = a.q_free;
  options.q = a.q;
  options.constrain_s2_zero = a.constrain_s2_zero;
  options.max_iterations = a.max_iterations;
  options.max_iterations_free = a.max_iterations_free;
  options.gradient_tolerance = a.tolerance;

  const FitResult fit =
      calibrate_target(panel, target_from_name(a.target), options);
  write_json_output(a.out, json::parse(to_json(fit)), mb);

  std::cout << a.target << " fit: loglik/point "
            << fit.likelihood.loglik_per_point << " over " << fit.n_points
            << " points, "
            << (fit.converged ? "converged" : "NOT converged") << " in "
            << fit.iterations << " iterations -> " << a.out << "\n";
  for (const auto& f : fit.flags) std::cout << "  flag: " << f << "\n";
  if (!fit.converged)
    throw NumericalError("calibration did not converge (written to " +
                         a.out + ")");
}

struct ValidateArgs {
  std::string model, night, out;
  std::vector<long> qs{126, 512};
  bool omega_upper_bound = false;
  long empirical_stocks = 0, empirical_days = 0;
  std::uint64_t seed = 0;
};

void run_validate(const ValidateArgs& a, ManifestBuilder* mb) {
  mb->input(a.model);
  if (!a.night.empty()) mb->input(a.night);
  mb->option("omega_upper_bound", a.omega_upper_bound);

  const BivariateModel model = a.night.empty()
                                   ? read_bivariate_model(a.model)
                                   : read_bivariate_model(a.model, a.night);

  json j;
  j["q_native"] = model.q;
  j["omega_upper_bound"] = a.omega_upper_bound;
  j["horizons"] = json::array();
  std::ostringstream qlist;
  for (long q : a.qs) {
    EquationParams day = model.day, night = model.night;
    if (a.omega_upper_bound) {
      day = with_omega_upper_bounds(day);
      night = with_omega_upper_bounds(night);
    }
    day = at_horizon(day, q, model.q, model.cross_moment,
                     model.cross_moment_leading, Side::day);
    night = at_horizon(night, q, model.q, model.cross_moment,
                       model.cross_moment_leading, Side::night);
    BivariateModel mq = model;
    mq.q = q;
    mq.day = day;
    mq.night = night;

    const StabilityReport stability = check_stability(mq);
    const PositivityReport pos_day = check_positivity(day, Side::day);
    const PositivityReport pos_night = check_positivity(night, Side::night);

    json h;
    h["q"] = q;
    h["stability"] = to_json_obj(stability);
    h["day"] = to_json_obj(pos_day);
    h["night"] = to_json_obj(pos_night);
    j["horizons"].push_back(h);
    qlist << (qlist.tellp() > 0 ? "," : "") << q;

    std::cout << "q=" << q << ": spectrum (" << stability.lambda1 << ", "
              << stability.lambda2 << ") "
              << (stability.stable ? "stable" : "UNSTABLE")
              << " | day " << pass_word(pos_day.overall) << " (margin "
              << pos_day.double_kernel.margin << ")"
              << " | night " << pass_word(pos_night.overall) << " (margin "
              << pos_night.double_kernel.margin << ")\n";
  }
  mb->option("q", qlist.str());

  if (a.empirical_stocks > 0 && a.empirical_days > 0) {
    mb->seed(a.seed);
    const EmpiricalPositivity emp = empirical_positivity(
        model, a.empirical_stocks, a.empirical_days, a.seed);
    j["empirical"] = {{"stock_days", emp.stock_days},
                      {"negative_count", emp.negative_count},
                      {"burnin_floored", emp.burnin_floored},
                      {"min_sigma2_d", emp.min_sigma2_d},
                      {"min_sigma2_n", emp.min_sigma2_n}};
    std::cout << "empirical: " << emp.negative_count
              << " negative variances over " << emp.stock_days
              << " stock-days (min sigma2 " << emp.min_sigma2_d << " / "
              << emp.min_sigma2_n << ")\n";
  }

  if (!a.out.empty()) write_json_output(a.out, j, mb);
}

struct EvaluateArgs {
  std::string panel, out;
  long q = 512, q_free = 63;
  std::uint64_t seed = 0;
};

void run_evaluate(const EvaluateArgs& a, ManifestBuilder* mb) {
  mb->input(a.panel);
  mb->option("q", a.q);
  mb->option("q_free", a.q_free);
  mb->seed(a.seed);

  const ReturnPanel panel = read_return_panel(a.panel);
  CalibrationOptions options;
  options.q_free = a.q_free;
  const ISOSReport rep = isos_compare(panel, a.q, a.seed, options);
  write_json_output(a.out, json::parse(to_json(rep)), mb);

  std::cout << "half sizes " << rep.half1.size() << "/" << rep.half2.size()
            << ", q=" << rep.q << "\n";
  for (const auto& c : rep.cells)
    std::cout << "  " << c.prediction << " via " << c.model
              << (c.derived ? " (derived)" : "") << ": IS " << c.l_is
              << "% OS " << c.l_os << "%\n";
}

struct WaldArgs {
  std::string fit1, fit2, out;
  std::vector<std::string> exclude{"s2"};
};

void run_wald(const WaldArgs& a, ManifestBuilder* mb) {
  mb->input(a.fit1);
  mb->input(a.fit2);
  std::ostringstream ex;
  for (const auto& e : a.exclude) ex << (ex.tellp() > 0 ? "," : "") << e;
  mb->option("exclude", ex.str());

  const WaldReport rep =
      wald_universality(read_fit(a.fit1), read_fit(a.fit2), a.exclude);
  std::cout << "Xi = " << rep.xi_n << ", dof = " << rep.dof
            << ", p = " << rep.p_value << "\n";
  for (size_t i = 0; i < rep.tested.size(); ++i)
    std::cout << "  " << rep.tested[i] << ": " << rep.theta1(long(i))
              << " vs " << rep.theta2(long(i)) << " (relative "
              << rep.relative_difference(long(i)) << ")\n";
  for (const auto& f : rep.flags) std::cout << "  flag: " << f << "\n";
  if (!a.out.empty()) write_json_output(a.out, json::parse(to_json(rep)), mb);
}

struct ReportArgs {
  std::string panel, model, night, out, cdf_csv;
  std::vector<long> qs;
  bool omega_upper_bound = false;
};

void run_report(const ReportArgs& a, ManifestBuilder* mb) {
  mb->input(a.panel);
  mb->input(a.model);
  if (!a.night.empty()) mb->input(a.night);

  const ReturnPanel panel = read_return_panel(a.panel);
  const ModelKind kind = classify_model_document(read_text(a.model));

  json j;
  ResidualDiagnostics diagnostics;
  if (kind == ModelKind::daily_arch) {
    const DailyArchParams params = read_daily_arch(a.model);
    j["model"] = json::parse(to_json(params));
    diagnostics = extract_residuals(params, panel);
    j["baseline_ratio"] = baseline_ratio(params, panel);
  } else {
    const BivariateModel model =
        a.night.empty() ? read_bivariate_model(a.model)
                        : read_bivariate_model(a.model, a.night);
    j["model"] = json::parse(to_json(model));
    diagnostics = extract_residuals(model, panel);
    j["baseline_ratios"] = json::parse(to_json(baseline_ratios(model, panel)));

    std::vector<long> qs = a.qs;
    if (qs.empty()) qs.push_back(model.q);
    j["validity"] = json::array();
    for (long q : qs) {
      EquationParams day = model.day, night = model.night;
      if (a.omega_upper_bound) {
        day = with_omega_upper_bounds(day);
        night = with_omega_upper_bounds(night);
      }
      day = at_horizon(day, q, model.q, model.cross_moment,
                       model.cross_moment_leading, Side::day);
      night = at_horizon(night, q, model.q, model.cross_moment,
                         model.cross_moment_leading, Side::night);
      BivariateModel mq = model;
      mq.q = q;
      mq.day = day;
      mq.night = night;
      json h;
      h["q"] = q;
      h["stability"] = to_json_obj(check_stability(mq));
      h["day"] = to_json_obj(check_positivity(day, Side::day));
      h["night"] = to_json_obj(check_positivity(night, Side::night));
      j["validity"].push_back(h);
    }
  }
  j["residuals"] = json::parse(to_json(diagnostics));

  for (const auto& s : diagnostics.series) {
    std::cout << s.label << " residuals: mean square " << s.mean_square
              << ", tail nu " << s.nu_fit.nu
              << (s.degenerate ? " (degenerate)" : "") << "\n";
    if (!a.cdf_csv.empty()) {
      const std::string path = a.cdf_csv + "_" + s.label + ".csv";
      write_text_atomic(path, cdf_to_csv(s.cdf_table));
      std::cout << "  exceedance curve -> " << path << "\n";
    }
  }
  write_json_output(a.out, j, mb);
}

} // namespace

int main(int argc, char** argv) {
  std::vector<std::string> argv_vec(argv, argv + argc);
  CLI::App app{
      "Batch tools for the two-stream (intra-day/overnight) feedback "
      "volatility model"};
  app.set_config("--config", "", "key=value configuration file");
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  unsigned threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (0 = hardware parallelism)")
      ->capture_default_str();

  IngestArgs ingest_args;
  auto* ingest = app.add_subcommand(
      "ingest", "build a normalized return panel from OHLC price files");
  ingest->add_option("--prices", ingest_args.prices,
                     "OHLC csv files (date,open[,high,low],close; a "
                     "leading ticker column makes one file long-format)")
      ->required();
  ingest->add_option("--out", ingest_args.out, "panel csv path")->required();
  ingest->add_flag("--raw", ingest_args.raw,
                   "skip the three-stage normalization");
  ingest->add_option("--normalization-out", ingest_args.normalization_out,
                     "normalization record path (default "
                     "<out>.normalization.json)");

  SimulateArgs sim_args;
  auto* simulate = app.add_subcommand(
      "simulate", "draw a synthetic return panel from a parameter file");
  simulate->add_option("--model", sim_args.model, "parameter file")
      ->required();
  simulate->add_option("--night", sim_args.night,
                       "companion equation file when --model holds a "
                       "single equation");
  simulate->add_option("--stocks", sim_args.stocks, "stocks to draw")
      ->capture_default_str();
  simulate->add_option("--days", sim_args.days, "emitted days")
      ->capture_default_str();
  simulate->add_option("--seed", sim_args.seed, "RNG seed")
      ->capture_default_str();
  simulate->add_option("--burn-in", sim_args.burn_in,
                       "warm-up days (-1 = max(10q, 5000))")
      ->capture_default_str();
  simulate->add_flag("--force", sim_args.force,
                     "simulate even if the model is unstable");
  simulate->add_flag("--allow-negative", sim_args.allow_negative,
                     "emit zero returns at negative variances instead of "
                     "aborting");
  simulate->add_option("--out", sim_args.out, "panel csv path")->required();

  CalibrateArgs cal_args;
  auto* calibrate = app.add_subcommand(
      "calibrate", "fit one likelihood target on a return panel");
  calibrate->add_option("--panel", cal_args.panel, "panel csv")->required();
  calibrate
      ->add_option("--target", cal_args.target, "day, night, or daily")
      ->check(CLI::IsMember({"day", "night", "daily"}))
      ->capture_default_str();
  calibrate->add_option("--q-free", cal_args.q_free,
                        "free-table stage horizon")
      ->capture_default_str();
  calibrate->add_option("--q", cal_args.q, "parametric stage horizon")
      ->capture_default_str();
  calibrate->add_flag("--constrain-s2-zero", cal_args.constrain_s2_zero,
                      "pin the night baseline variance to zero");
  calibrate->add_option("--max-iterations", cal_args.max_iterations,
                        "parametric stage iteration cap")
      ->capture_default_str();
  calibrate->add_option("--max-iterations-free",
                        cal_args.max_iterations_free,
                        "free stage iteration cap")
      ->capture_default_str();
  calibrate->add_option("--tolerance", cal_args.tolerance,
                        "per-point gradient max-norm")
      ->capture_default_str();
  calibrate->add_option("--out", cal_args.out, "fit json path")->required();

  ValidateArgs val_args;
  auto* validate = app.add_subcommand(
      "validate", "stability and positivity of a two-equation model");
  validate->add_option("--model", val_args.model,
                       "model or fit json (combined, or day equation)")
      ->required();
  validate->add_option("--night", val_args.night,
                       "companion equation when --model holds one side");
  validate->add_option("--q", val_args.qs, "horizons to check")
      ->delimiter(',')
      ->capture_default_str();
  validate->add_flag("--omega-upper-bound", val_args.omega_upper_bound,
                     "read cutoff rates at the upper end of their "
                     "confidence band");
  validate->add_option("--empirical-stocks", val_args.empirical_stocks,
                       "stocks for the simulated negative-variance count");
  validate->add_option("--empirical-days", val_args.empirical_days,
                       "days per stock for the simulated count");
  validate->add_option("--seed", val_args.seed, "empirical RNG seed")
      ->capture_default_str();
  validate->add_option("--out", val_args.out, "validity json path");

  EvaluateArgs eval_args;
  auto* evaluate = app.add_subcommand(
      "evaluate",
      "half-pool in/out-of-sample comparison against the single-stream "
      "model");
  evaluate->add_option("--panel", eval_args.panel, "panel csv")->required();
  evaluate->add_option("--q", eval_args.q, "model horizon")
      ->capture_default_str();
  evaluate->add_option("--q-free", eval_args.q_free,
                       "free-table stage horizon")
      ->capture_default_str();
  evaluate->add_option("--seed", eval_args.seed, "half-split seed")
      ->capture_default_str();
  evaluate->add_option("--out", eval_args.out, "report json path")
      ->required();

  WaldArgs wald_args;
  auto* wald = app.add_subcommand(
      "wald", "parameter-equality test between two fits");
  wald->add_option("--fit1", wald_args.fit1, "first fit json")->required();
  wald->add_option("--fit2", wald_args.fit2, "second fit json")->required();
  wald->add_option("--exclude", wald_args.exclude,
                   "parameters left out of the test")
      ->delimiter(',')
      ->capture_default_str();
  wald->add_option("--out", wald_args.out, "report json path");

  ReportArgs rep_args;
  auto* report = app.add_subcommand(
      "report", "bundle model, validity, and residual diagnostics");
  report->add_option("--panel", rep_args.panel, "panel csv")->required();
  report->add_option("--model", rep_args.model, "model or fit json")
      ->required();
  report->add_option("--night", rep_args.night,
                     "companion equation when --model holds one side");
  report->add_option("--q", rep_args.qs,
                     "validity horizons (default: the model's)")
      ->delimiter(',');
  report->add_flag("--omega-upper-bound", rep_args.omega_upper_bound,
                   "read cutoff rates at the upper end of their band");
  report->add_option("--cdf-csv", rep_args.cdf_csv,
                     "prefix for exceedance-curve csv exports");
  report->add_option("--out", rep_args.out, "report json path")->required();

  try {
    app.parse(argc, argv);
    set_thread_count(threads);
    ManifestBuilder mb(app.get_subcommands().front()->get_name(), argv_vec);
    if (ingest->parsed()) run_ingest(ingest_args, &mb);
    if (simulate->parsed()) run_simulate(sim_args, &mb);
    if (calibrate->parsed()) run_calibrate(cal_args, &mb);
    if (validate->parsed()) run_validate(val_args, &mb);
    if (evaluate->parsed()) run_evaluate(eval_args, &mb);
    if (wald->parsed()) run_wald(wald_args, &mb);
    if (report->parsed()) run_report(rep_args, &mb);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
