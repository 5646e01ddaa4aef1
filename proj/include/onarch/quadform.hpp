#pragma once

#include <Eigen/Core>

#include "onarch/filter.hpp"
#include "onarch/model.hpp"

namespace onarch {

/// The equation as a quadratic form over the regressor vector
/// R_t = (rd_{t-1..t-q}, rn_t, rn_{t-1..t-q}), dimension 2q + 1:
///
///   sigma2_t = s2 + R_t' K R_t + L' R_t
///
/// K symmetric; diagonal carries the DD and NN positions, the two
/// off-diagonal bands carry the ND and DN couplings at half weight each
/// (the form doubles them back).
struct QuadraticForm {
  Eigen::MatrixXd K;  // (2q+1) x (2q+1)
  Eigen::VectorXd L;  // 2q+1
  double s2 = 0.0;
};

QuadraticForm build_quadratic_matrix(const EquationParams& params, Side side);

/// Same assembly from already-expanded position weights.
QuadraticForm build_quadratic_matrix(const PositionWeights& w, double s2);

/// Regressor vector for date t of a stock history (t >= q).
Eigen::VectorXd regressor_vector(const Eigen::VectorXd& rd,
                                 const Eigen::VectorXd& rn, long t, long q);

double evaluate_quadratic_form(const QuadraticForm& form,
                               const Eigen::VectorXd& regressor);

/// The bordered matrix [[K, L/2], [L'/2, s2]]; the full affine form
/// sigma2 = (R, 1)' M (R, 1) is nonnegative for all R iff M is positive
/// semidefinite.
Eigen::MatrixXd bordered_matrix(const QuadraticForm& form);

} // namespace onarch
