#include "onarch/model.hpp"

#include <algorithm>
#include <json.hpp>
#include <optional>

#include "onarch/errors.hpp"
#include "onarch/io.hpp"

namespace onarch {

using nlohmann::json;

std::string side_name(Side side) {
  return side == Side::day ? "day" : "night";
}

EquationParams with_horizon(const EquationParams& params, long q) {
  EquationParams out = params;
  auto retab = [q](KernelSpec& k) {
    if (k.shape == KernelSpec::Shape::free) {
      Eigen::VectorXd c = Eigen::VectorXd::Zero(q);
      const long n = std::min<long>(q, k.coefficients.size());
      c.head(n) = k.coefficients.head(n);
      k.coefficients = std::move(c);
    }
    k.q = q;
  };
  retab(out.K_DD);
  retab(out.K_NN);
  retab(out.K_ND);
  retab(out.K_DN);
  retab(out.L_D);
  retab(out.L_N);
  return out;
}

namespace {

json kernel_to_json(const KernelSpec& k) {
  json j;
  j["shape"] = shape_name(k.shape);
  j["q"] = k.q;
  if (k.shape == KernelSpec::Shape::free) {
    j["coefficients"] =
        std::vector<double>(k.coefficients.data(),
                            k.coefficients.data() + k.coefficients.size());
    return j;
  }
  j["g"] = k.g;
  j["omega"] = k.omega;
  if (k.g_err != 0.0) j["g_err"] = k.g_err;
  if (k.omega_err != 0.0) j["omega_err"] = k.omega_err;
  if (k.shape == KernelSpec::Shape::power_law_exp) {
    j["alpha"] = k.alpha;
    if (k.alpha_err != 0.0) j["alpha_err"] = k.alpha_err;
  }
  return j;
}

KernelSpec kernel_from_json(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("shape"))
    throw DataError("kernel " + name + ": missing shape");
  KernelSpec k;
  k.shape = shape_from_name(j.at("shape").get<std::string>());
  if (k.shape == KernelSpec::Shape::free) {
    const auto c = j.at("coefficients").get<std::vector<double>>();
    k.coefficients =
        Eigen::Map<const Eigen::VectorXd>(c.data(), long(c.size()));
    k.q = long(c.size());
    if (j.contains("q") && j.at("q").get<long>() != k.q)
      throw DataError("kernel " + name + ": q disagrees with table length");
  } else {
    k.g = j.at("g").get<double>();
    k.omega = j.at("omega").get<double>();
    k.q = j.at("q").get<long>();
    k.g_err = j.value("g_err", 0.0);
    k.omega_err = j.value("omega_err", 0.0);
    if (k.shape == KernelSpec::Shape::power_law_exp) {
      k.alpha = j.at("alpha").get<double>();
      k.alpha_err = j.value("alpha_err", 0.0);
    }
  }
  if (k.q < 1) throw DataError("kernel " + name + ": q < 1");
  return k;
}

json equation_to_json_obj(const EquationParams& p) {
  json j;
  j["s2"] = p.s2;
  if (p.s2_err != 0.0) j["s2_err"] = p.s2_err;
  j["nu"] = p.nu;
  if (p.nu_err != 0.0) j["nu_err"] = p.nu_err;
  j["K_DD"] = kernel_to_json(p.K_DD);
  j["K_NN"] = kernel_to_json(p.K_NN);
  j["K_ND"] = kernel_to_json(p.K_ND);
  j["K_DN"] = kernel_to_json(p.K_DN);
  j["L_D"] = kernel_to_json(p.L_D);
  j["L_N"] = kernel_to_json(p.L_N);
  return j;
}

EquationParams equation_from_json_obj(const json& j) {
  EquationParams p;
  p.s2 = j.at("s2").get<double>();
  p.s2_err = j.value("s2_err", 0.0);
  p.nu = j.at("nu").get<double>();
  p.nu_err = j.value("nu_err", 0.0);
  p.K_DD = kernel_from_json(j.at("K_DD"), "K_DD");
  p.K_NN = kernel_from_json(j.at("K_NN"), "K_NN");
  p.K_ND = kernel_from_json(j.at("K_ND"), "K_ND");
  p.K_DN = kernel_from_json(j.at("K_DN"), "K_DN");
  p.L_D = kernel_from_json(j.at("L_D"), "L_D");
  p.L_N = kernel_from_json(j.at("L_N"), "L_N");
  if (p.nu <= 2.0) throw DataError("nu must exceed 2");
  const long q = p.K_DD.q;
  for (const KernelSpec* k : {&p.K_NN, &p.K_ND, &p.K_DN, &p.L_D, &p.L_N})
    if (k->q != q) throw DataError("kernel horizons disagree within equation");
  return p;
}

json daily_to_json_obj(const DailyArchParams& p) {
  json j;
  j["s2"] = p.s2;
  if (p.s2_err != 0.0) j["s2_err"] = p.s2_err;
  j["nu"] = p.nu;
  if (p.nu_err != 0.0) j["nu_err"] = p.nu_err;
  j["K"] = kernel_to_json(p.K);
  j["L"] = kernel_to_json(p.L);
  return j;
}

DailyArchParams daily_from_json_obj(const json& j) {
  DailyArchParams p;
  p.s2 = j.at("s2").get<double>();
  p.s2_err = j.value("s2_err", 0.0);
  p.nu = j.at("nu").get<double>();
  p.nu_err = j.value("nu_err", 0.0);
  p.K = kernel_from_json(j.at("K"), "K");
  p.L = kernel_from_json(j.at("L"), "L");
  if (p.nu <= 2.0) throw DataError("nu must exceed 2");
  if (p.K.q != p.L.q) throw DataError("kernel horizons disagree");
  return p;
}

json bivariate_to_json_obj(const BivariateModel& m) {
  json j;
  j["q"] = m.q;
  j["day"] = equation_to_json_obj(m.day);
  j["night"] = equation_to_json_obj(m.night);
  j["cross_moment"] = m.cross_moment;
  j["cross_moment_leading"] = m.cross_moment_leading;
  j["variance_shares"] = {m.variance_shares(0), m.variance_shares(1)};
  return j;
}

BivariateModel bivariate_from_json_obj(const json& j) {
  BivariateModel m;
  m.day = equation_from_json_obj(j.at("day"));
  m.night = equation_from_json_obj(j.at("night"));
  m.q = j.value("q", m.day.q());
  m.cross_moment = j.value("cross_moment", 0.0);
  m.cross_moment_leading = j.value("cross_moment_leading", 0.0);
  if (j.contains("variance_shares")) {
    const auto v = j.at("variance_shares").get<std::vector<double>>();
    if (v.size() != 2) throw DataError("variance_shares must have 2 entries");
    m.variance_shares << v[0], v[1];
  }
  if (m.day.q() != m.q || m.night.q() != m.q)
    throw DataError("equation horizons disagree with model q");
  if (m.variance_shares.minCoeff() <= 0.0 ||
      m.variance_shares.maxCoeff() >= 1.0)
    throw DataError("variance shares must lie in (0, 1)");
  return m;
}

json parse_document(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("malformed JSON document");
  if (!j.is_object()) throw DataError("model document must be an object");
  // Calibration outputs nest the model under "model"; accept them
  // anywhere a plain parameter file is accepted.
  if (j.contains("model") && j.at("model").is_object())
    return j.at("model");
  return j;
}

} // namespace

std::string to_json(const EquationParams& params) {
  return equation_to_json_obj(params).dump(2) + "\n";
}

std::string to_json(const BivariateModel& model) {
  return bivariate_to_json_obj(model).dump(2) + "\n";
}

std::string to_json(const DailyArchParams& params) {
  return daily_to_json_obj(params).dump(2) + "\n";
}

EquationParams equation_from_json(const std::string& text) {
  return equation_from_json_obj(parse_document(text));
}

BivariateModel bivariate_from_json(const std::string& text) {
  return bivariate_from_json_obj(parse_document(text));
}

DailyArchParams daily_arch_from_json(const std::string& text) {
  return daily_from_json_obj(parse_document(text));
}

ModelKind classify_model_document(const std::string& text) {
  const json j = parse_document(text);
  if (j.contains("day") && j.contains("night")) return ModelKind::bivariate;
  if (j.contains("K_DD")) return ModelKind::equation;
  if (j.contains("K")) return ModelKind::daily_arch;
  throw DataError("document is not a model parameter file");
}

namespace {

// Pooled data constants riding along in single-equation documents.
struct PoolConstants {
  std::optional<double> cross, cross_leading;
  std::optional<std::vector<double>> shares;
};

PoolConstants pool_constants(const json& j) {
  PoolConstants c;
  if (j.contains("cross_moment")) c.cross = j.at("cross_moment").get<double>();
  if (j.contains("cross_moment_leading"))
    c.cross_leading = j.at("cross_moment_leading").get<double>();
  if (j.contains("variance_shares"))
    c.shares = j.at("variance_shares").get<std::vector<double>>();
  return c;
}

Side side_of_document(const json& j, const std::string& path) {
  if (!j.contains("side"))
    throw DataError(path + ": single-equation document lacks \"side\"");
  const auto s = j.at("side").get<std::string>();
  if (s == "day") return Side::day;
  if (s == "night") return Side::night;
  throw DataError(path + ": side must be \"day\" or \"night\"");
}

} // namespace

BivariateModel read_bivariate_model(const std::string& path) {
  const json j = parse_document(read_text(path));
  if (j.contains("day") && j.contains("night"))
    return bivariate_from_json_obj(j);
  throw DataError(path +
                  ": not a combined model document; pass the companion "
                  "single-equation file as well");
}

BivariateModel read_bivariate_model(const std::string& path,
                                    const std::string& companion_path) {
  const json a = parse_document(read_text(path));
  if (a.contains("day") && a.contains("night"))
    return bivariate_from_json_obj(a);
  const json b = parse_document(read_text(companion_path));
  const Side side_a = side_of_document(a, path);
  const Side side_b = side_of_document(b, companion_path);
  if (side_a == side_b)
    throw DataError("both files carry the " + side_name(side_a) +
                    " equation");
  BivariateModel m;
  m.equation(side_a) = equation_from_json_obj(a);
  m.equation(side_b) = equation_from_json_obj(b);
  if (m.day.q() != m.night.q())
    throw DataError("equation horizons disagree across files");
  m.q = m.day.q();
  for (const json* doc : {&a, &b}) {
    const PoolConstants c = pool_constants(*doc);
    if (c.cross) m.cross_moment = *c.cross;
    if (c.cross_leading) m.cross_moment_leading = *c.cross_leading;
    if (c.shares && c.shares->size() == 2)
      m.variance_shares << (*c.shares)[0], (*c.shares)[1];
  }
  const PoolConstants ca = pool_constants(a), cb = pool_constants(b);
  if (ca.cross && cb.cross && *ca.cross != *cb.cross)
    throw DataError("cross_moment disagrees across files");
  return m;
}

DailyArchParams read_daily_arch(const std::string& path) {
  return daily_arch_from_json(read_text(path));
}

void write_model(const std::string& path, const BivariateModel& model) {
  write_text_atomic(path, to_json(model));
}

void write_model(const std::string& path, const DailyArchParams& params) {
  write_text_atomic(path, to_json(params));
}

} // namespace onarch
