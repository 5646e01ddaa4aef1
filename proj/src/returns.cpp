#include "onarch/returns.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <map>

#include "onarch/csv.hpp"
#include "onarch/errors.hpp"

namespace onarch {

ReturnPanel compute_returns(const OhlcPanel& panel) {
  const auto T = static_cast<Eigen::Index>(panel.calendar.size());
  const auto N = static_cast<Eigen::Index>(panel.n_stocks());
  ReturnPanel out;
  out.tickers = panel.stocks;
  out.dates = panel.calendar;
  out.rd = Eigen::MatrixXd::Zero(T, N);
  out.rn = Eigen::MatrixXd::Zero(T, N);
  out.r = Eigen::MatrixXd::Zero(T, N);
  out.valid_d = MaskMatrix::Zero(T, N);
  out.valid_n = MaskMatrix::Zero(T, N);
  out.valid_r = MaskMatrix::Zero(T, N);

  std::map<DayCount, Eigen::Index> date_index;
  for (Eigen::Index t = 0; t < T; ++t) date_index[panel.calendar[t]] = t;

  for (Eigen::Index s = 0; s < N; ++s) {
    const OhlcRecord* prev = nullptr;
    for (const auto& rec : panel.records[s]) {
      const Eigen::Index t = date_index.at(rec.date);
      out.rd(t, s) = std::log(rec.close / rec.open);
      out.valid_d(t, s) = 1;
      if (prev != nullptr) {
        out.rn(t, s) = std::log(rec.open / prev->close);
        out.valid_n(t, s) = 1;
        out.r(t, s) = out.rd(t, s) + out.rn(t, s);
        out.valid_r(t, s) = 1;
        if (rec.date - prev->date > 5) ++out.gap_overnights;
      }
      prev = &rec;
    }
  }
  return out;
}

namespace {

void normalize_stream(Eigen::MatrixXd& x, const MaskMatrix& valid,
                      const std::vector<DayCount>& dates,
                      Eigen::VectorXd& means, Eigen::MatrixXd& dispersion,
                      Eigen::VectorXd& hist) {
  const Eigen::Index T = x.rows(), N = x.cols();
  if (N < 2) throw DataError("normalization requires at least 2 stocks");
  means.resize(N);
  hist.resize(N);
  dispersion = Eigen::MatrixXd::Ones(T, N);

  // Stage 1: per-stock temporal mean.
  for (Eigen::Index s = 0; s < N; ++s) {
    double sum = 0.0;
    long n = 0;
    for (Eigen::Index t = 0; t < T; ++t)
      if (valid(t, s)) {
        sum += x(t, s);
        ++n;
      }
    means(s) = n > 0 ? sum / n : 0.0;
    for (Eigen::Index t = 0; t < T; ++t)
      if (valid(t, s)) x(t, s) -= means(s);
  }

  // Stage 2: leave-one-out cross-sectional root mean square per date.
  for (Eigen::Index t = 0; t < T; ++t) {
    double total = 0.0;
    long n = 0;
    for (Eigen::Index s = 0; s < N; ++s)
      if (valid(t, s)) {
        total += x(t, s) * x(t, s);
        ++n;
      }
    for (Eigen::Index s = 0; s < N; ++s) {
      if (!valid(t, s)) continue;
      const long m = n - 1;
      if (m < 1)
        throw DataError("no peer stocks to compute dispersion on " +
                        format_iso_date(dates[t]));
      const double d2 = (total - x(t, s) * x(t, s)) / m;
      if (d2 <= 0.0)
        throw DataError("zero cross-sectional dispersion on " +
                        format_iso_date(dates[t]));
      dispersion(t, s) = std::sqrt(d2);
      x(t, s) /= dispersion(t, s);
    }
  }

  // Stage 3: per-stock historical root mean square (uncentered), making
  // the per-stock second moment exactly one.
  for (Eigen::Index s = 0; s < N; ++s) {
    double total = 0.0;
    long n = 0;
    for (Eigen::Index t = 0; t < T; ++t)
      if (valid(t, s)) {
        total += x(t, s) * x(t, s);
        ++n;
      }
    if (n == 0 || total <= 0.0)
      throw DataError("degenerate stock series in normalization");
    hist(s) = std::sqrt(total / n);
    for (Eigen::Index t = 0; t < T; ++t)
      if (valid(t, s)) x(t, s) /= hist(s);
  }
}

} // namespace

ReturnPanel normalize_panel(const ReturnPanel& returns) {
  ReturnPanel out = returns;
  normalize_stream(out.rd, out.valid_d, out.dates, out.normalization.mean_d,
                   out.normalization.dispersion_d, out.normalization.hist_d);
  normalize_stream(out.rn, out.valid_n, out.dates, out.normalization.mean_n,
                   out.normalization.dispersion_n, out.normalization.hist_n);
  out.normalization.applied = true;
  for (Eigen::Index s = 0; s < out.n_stocks(); ++s)
    for (Eigen::Index t = 0; t < out.n_dates(); ++t)
      out.r(t, s) = out.valid_r(t, s) ? out.rd(t, s) + out.rn(t, s) : 0.0;
  return out;
}

ReturnPanel denormalize_panel(const ReturnPanel& returns) {
  if (!returns.normalization.applied)
    throw DataError("panel carries no normalization to undo");
  ReturnPanel out = returns;
  const auto& nr = returns.normalization;
  for (Eigen::Index s = 0; s < out.n_stocks(); ++s)
    for (Eigen::Index t = 0; t < out.n_dates(); ++t) {
      if (out.valid_d(t, s))
        out.rd(t, s) *= nr.hist_d(s) * nr.dispersion_d(t, s);
      if (out.valid_n(t, s))
        out.rn(t, s) *= nr.hist_n(s) * nr.dispersion_n(t, s);
      out.r(t, s) = out.valid_r(t, s) ? out.rd(t, s) + out.rn(t, s) : 0.0;
    }
  out.normalization.applied = false;
  return out;
}

SeasonalityProfile weekly_seasonality(const ReturnPanel& returns) {
  if (returns.n_dates() == 0 || returns.n_stocks() == 0)
    throw DataError("empty panel");
  SeasonalityProfile p;
  p.intraday = Eigen::VectorXd::Zero(7);
  p.overnight = Eigen::VectorXd::Zero(7);
  Eigen::VectorXd ss_d = Eigen::VectorXd::Zero(7), ss_n = ss_d;
  Eigen::VectorXd n_d = Eigen::VectorXd::Zero(7), n_n = n_d;
  for (Eigen::Index t = 0; t < returns.n_dates(); ++t) {
    const int w = weekday(returns.dates[t]);
    for (Eigen::Index s = 0; s < returns.n_stocks(); ++s) {
      if (returns.valid_d(t, s)) {
        ss_d(w) += returns.rd(t, s) * returns.rd(t, s);
        n_d(w) += 1.0;
      }
      // The overnight of date t is attributed to date t's weekday: the
      // night (or weekend) preceding the day.
      if (returns.valid_n(t, s)) {
        ss_n(w) += returns.rn(t, s) * returns.rn(t, s);
        n_n(w) += 1.0;
      }
    }
  }
  auto finish = [](const Eigen::VectorXd& ss, const Eigen::VectorXd& n) {
    Eigen::VectorXd rms = Eigen::VectorXd::Zero(7);
    double sum = 0.0;
    int k = 0;
    for (int w = 0; w < 7; ++w)
      if (n(w) > 0) {
        rms(w) = std::sqrt(ss(w) / n(w));
        sum += rms(w);
        ++k;
      }
    if (k > 0 && sum > 0.0) rms *= k / sum;
    return rms;
  };
  p.intraday = finish(ss_d, n_d);
  p.overnight = finish(ss_n, n_n);
  return p;
}

namespace {

MomentsSummary::Row moments_row(const Eigen::MatrixXd& x,
                                const ReturnPanel& panel, char which) {
  double m1 = 0;
  long n = 0;
  auto ok = [&](Eigen::Index t, Eigen::Index s) {
    switch (which) {
      case 'd': return panel.valid_d(t, s) != 0;
      case 'n': return panel.valid_n(t, s) != 0;
      default: return panel.valid_daily(t, s);
    }
  };
  for (Eigen::Index s = 0; s < x.cols(); ++s)
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      if (ok(t, s)) {
        m1 += x(t, s);
        ++n;
      }
  if (n == 0) throw DataError("empty panel");
  m1 /= n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (Eigen::Index s = 0; s < x.cols(); ++s)
    for (Eigen::Index t = 0; t < x.rows(); ++t)
      if (ok(t, s)) {
        const double c = x(t, s) - m1;
        m2 += c * c;
        m3 += c * c * c;
        m4 += c * c * c * c;
      }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  MomentsSummary::Row row;
  row.mean = m1;
  row.std = std::sqrt(m2);
  row.degenerate = m2 == 0.0;
  row.skewness = row.degenerate ? 0.0 : m3 / std::pow(m2, 1.5);
  row.kurtosis = row.degenerate ? 0.0 : m4 / (m2 * m2);
  return row;
}

} // namespace

MomentsSummary moments_summary(const ReturnPanel& returns) {
  MomentsSummary s;
  s.intraday = moments_row(returns.rd, returns, 'd');
  s.overnight = moments_row(returns.rn, returns, 'n');
  s.daily = moments_row(returns.r, returns, 'r');
  return s;
}

CrossCorrelations cross_correlations(const ReturnPanel& returns) {
  auto corr = [](const std::vector<std::pair<double, double>>& xy) {
    if (xy.size() < 2) return 0.0;
    double mx = 0, my = 0;
    for (auto& [a, b] : xy) {
      mx += a;
      my += b;
    }
    mx /= xy.size();
    my /= xy.size();
    double sxx = 0, syy = 0, sxy = 0;
    for (auto& [a, b] : xy) {
      sxx += (a - mx) * (a - mx);
      syy += (b - my) * (b - my);
      sxy += (a - mx) * (b - my);
    }
    const double d = std::sqrt(sxx * syy);
    return d > 0 ? sxy / d : 0.0;
  };

  std::vector<std::pair<double, double>> same, lead;
  double r2 = 0, rd2 = 0, rn2 = 0;
  long n = 0;
  for (Eigen::Index s = 0; s < returns.n_stocks(); ++s) {
    for (Eigen::Index t = 0; t < returns.n_dates(); ++t) {
      if (returns.valid_daily(t, s)) {
        same.push_back({returns.rd(t, s), returns.rn(t, s)});
        r2 += returns.r(t, s) * returns.r(t, s);
        rd2 += returns.rd(t, s) * returns.rd(t, s);
        rn2 += returns.rn(t, s) * returns.rn(t, s);
        ++n;
      }
      if (t + 1 < returns.n_dates() && returns.valid_d(t, s) &&
          returns.valid_n(t + 1, s))
        lead.push_back({returns.rd(t, s), returns.rn(t + 1, s)});
    }
  }
  CrossCorrelations c;
  c.same_date = corr(same);
  c.intraday_leading = corr(lead);
  c.additivity_deviation =
      (n > 0 && r2 > 0) ? std::fabs(r2 - rd2 - rn2) / r2 : 0.0;
  return c;
}

void write_return_panel(const std::string& path, const ReturnPanel& panel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "ticker,date,r_intraday,r_overnight,r_daily\n";
  for (Eigen::Index s = 0; s < panel.n_stocks(); ++s)
    for (Eigen::Index t = 0; t < panel.n_dates(); ++t) {
      if (!panel.valid_d(t, s) && !panel.valid_n(t, s) && !panel.valid_r(t, s))
        continue;
      out << panel.tickers[s] << ',' << format_iso_date(panel.dates[t]) << ',';
      if (panel.valid_d(t, s)) out << format_double(panel.rd(t, s));
      out << ',';
      if (panel.valid_n(t, s)) out << format_double(panel.rn(t, s));
      out << ',';
      if (panel.valid_daily(t, s)) out << format_double(panel.r(t, s));
      out << '\n';
    }
  if (!out) throw DataError("write failed: " + path);
}

ReturnPanel read_return_panel(const std::string& path) {
  CsvTable t = read_csv(path);
  const int c_ticker = t.column("ticker");
  const int c_date = t.column("date");
  const int c_d = t.column("r_intraday");
  const int c_n = t.column("r_overnight");
  const int c_r = t.column("r_daily");
  if (c_ticker < 0 || c_date < 0 || c_d < 0 || c_n < 0 || c_r < 0)
    throw DataError(path + ": bad return panel header");

  struct Cell {
    std::optional<double> d, n, r;
  };
  std::map<std::string, std::map<DayCount, Cell>> cells;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string context = path + ":" + std::to_string(i + 2);
    if (row.size() < 5) throw DataError(context + ": malformed row");
    auto& cell = cells[row[c_ticker]][parse_iso_date(row[c_date])];
    if (!row[c_d].empty()) cell.d = parse_double(row[c_d], context);
    if (!row[c_n].empty()) cell.n = parse_double(row[c_n], context);
    if (!row[c_r].empty()) cell.r = parse_double(row[c_r], context);
  }

  std::map<DayCount, Eigen::Index> date_index;
  for (const auto& [ticker, series] : cells)
    for (const auto& [d, cell] : series) date_index.emplace(d, 0);
  Eigen::Index ti = 0;
  for (auto& [d, idx] : date_index) idx = ti++;

  ReturnPanel panel;
  panel.dates.reserve(date_index.size());
  for (const auto& [d, idx] : date_index) panel.dates.push_back(d);
  const auto T = static_cast<Eigen::Index>(panel.dates.size());
  const auto N = static_cast<Eigen::Index>(cells.size());
  panel.rd = Eigen::MatrixXd::Zero(T, N);
  panel.rn = Eigen::MatrixXd::Zero(T, N);
  panel.r = Eigen::MatrixXd::Zero(T, N);
  panel.valid_d = MaskMatrix::Zero(T, N);
  panel.valid_n = MaskMatrix::Zero(T, N);
  panel.valid_r = MaskMatrix::Zero(T, N);
  Eigen::Index s = 0;
  for (const auto& [ticker, series] : cells) {
    panel.tickers.push_back(ticker);
    for (const auto& [d, cell] : series) {
      const Eigen::Index tt = date_index.at(d);
      if (cell.d) {
        panel.rd(tt, s) = *cell.d;
        panel.valid_d(tt, s) = 1;
      }
      if (cell.n) {
        panel.rn(tt, s) = *cell.n;
        panel.valid_n(tt, s) = 1;
      }
      if (cell.r) {
        panel.r(tt, s) = *cell.r;
        panel.valid_r(tt, s) = 1;
      }
    }
    ++s;
  }
  return panel;
}

void write_normalization(const std::string& path, const ReturnPanel& panel) {
  const auto& nr = panel.normalization;
  nlohmann::json j;
  j["applied"] = nr.applied;
  auto vec = [](const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
  };
  j["temporal_means"] = {{"intraday", vec(nr.mean_d)},
                         {"overnight", vec(nr.mean_n)}};
  j["historical_stds"] = {{"intraday", vec(nr.hist_d)},
                          {"overnight", vec(nr.hist_n)}};
  auto mat = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> rows(m.rows());
    for (Eigen::Index t = 0; t < m.rows(); ++t) {
      rows[t].resize(m.cols());
      for (Eigen::Index s = 0; s < m.cols(); ++s) rows[t][s] = m(t, s);
    }
    return rows;
  };
  j["dispersion_series"] = {{"intraday", mat(nr.dispersion_d)},
                            {"overnight", mat(nr.dispersion_n)}};
  j["tickers"] = panel.tickers;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << '\n';
}

} // namespace onarch
