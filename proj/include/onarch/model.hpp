#pragma once

#include <Eigen/Core>
#include <string>

#include "onarch/kernels.hpp"

namespace onarch {

enum class Side { day, night };

std::string side_name(Side side);

/// One conditional-variance equation: baseline, four quadratic feedback
/// kernels, two leverage kernels, and the Student tail of its residual.
struct EquationParams {
  double s2 = 0.0;
  KernelSpec K_DD, K_NN, K_ND, K_DN;
  KernelSpec L_D, L_N;
  double nu = 0.0;
  double nu_err = 0.0;
  double s2_err = 0.0;

  long q() const { return K_DD.q; }
};

/// The paired day/night equations plus the pooled data constants used
/// by the daily <-> intraday/overnight volatility conversions.
struct BivariateModel {
  long q = 0;
  EquationParams day, night;
  double cross_moment = 0.0;          // <rd_t rn_t>, same date
  double cross_moment_leading = 0.0;  // <rd_t rn_{t+1}>
  Eigen::Vector2d variance_shares{0.5, 0.5};  // <rd^2>/<r^2>, <rn^2>/<r^2>

  const EquationParams& equation(Side side) const {
    return side == Side::day ? day : night;
  }
  EquationParams& equation(Side side) {
    return side == Side::day ? day : night;
  }
};

/// Single-stream benchmark on daily returns: one quadratic kernel, one
/// leverage kernel.
struct DailyArchParams {
  double s2 = 0.0;
  KernelSpec K, L;
  double nu = 0.0;
  double nu_err = 0.0;
  double s2_err = 0.0;

  long q() const { return K.q; }
};

/// Retabulates every kernel of the equation at horizon q. Parametric
/// shapes re-evaluate; free tables are truncated or zero-extended.
EquationParams with_horizon(const EquationParams& params, long q);

/// JSON mirrors of the structs above. An equation document has the
/// kernel fields at top level; a bivariate document nests two equation
/// documents under "day" and "night".
std::string to_json(const EquationParams& params);
std::string to_json(const BivariateModel& model);
std::string to_json(const DailyArchParams& params);

EquationParams equation_from_json(const std::string& text);
BivariateModel bivariate_from_json(const std::string& text);
DailyArchParams daily_arch_from_json(const std::string& text);

enum class ModelKind { bivariate, equation, daily_arch };
ModelKind classify_model_document(const std::string& text);

/// Reads a bivariate model from one combined document, or assembles it
/// from two single-equation documents (either order; the pooled data
/// constants must agree where both carry them).
BivariateModel read_bivariate_model(const std::string& path);
BivariateModel read_bivariate_model(const std::string& path,
                                    const std::string& companion_path);

DailyArchParams read_daily_arch(const std::string& path);

void write_model(const std::string& path, const BivariateModel& model);
void write_model(const std::string& path, const DailyArchParams& params);

} // namespace onarch
