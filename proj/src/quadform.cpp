#include "onarch/quadform.hpp"

#include "onarch/errors.hpp"

namespace onarch {

QuadraticForm build_quadratic_matrix(const PositionWeights& w, double s2) {
  const long q = w.q, dim = 2 * q + 1;
  QuadraticForm form;
  form.s2 = s2;
  form.K = Eigen::MatrixXd::Zero(dim, dim);
  form.L = Eigen::VectorXd::Zero(dim);

  // Index layout: i in [0, q) is rd_{t-(i+1)}; q + j for j in [0, q]
  // is rn_{t-j}.
  for (long a = 1; a <= q; ++a) {
    form.K(a - 1, a - 1) = w.c_dd(a);
    form.L(a - 1) = w.l_d(a);
  }
  for (long j = 0; j <= q; ++j) {
    form.K(q + j, q + j) = w.c_nn(j);
    form.L(q + j) = w.l_n(j);
  }
  for (long a = 1; a <= q; ++a) {
    // rd_{t-a} rn_{t-a}: symmetric pair, doubled by the form.
    form.K(a - 1, q + a) = w.c_nd(a);
    form.K(q + a, a - 1) = w.c_nd(a);
    // rd_{t-a} rn_{t-a+1}.
    form.K(a - 1, q + a - 1) = w.c_dn(a);
    form.K(q + a - 1, a - 1) = w.c_dn(a);
  }
  return form;
}

QuadraticForm build_quadratic_matrix(const EquationParams& params,
                                     Side side) {
  return build_quadratic_matrix(assemble_positions(params, side), params.s2);
}

Eigen::VectorXd regressor_vector(const Eigen::VectorXd& rd,
                                 const Eigen::VectorXd& rn, long t, long q) {
  if (t < q || t >= rd.size())
    throw DataError("regressor date outside the filterable range");
  Eigen::VectorXd x(2 * q + 1);
  for (long a = 1; a <= q; ++a) x(a - 1) = rd(t - a);
  for (long j = 0; j <= q; ++j) x(q + j) = rn(t - j);
  return x;
}

double evaluate_quadratic_form(const QuadraticForm& form,
                               const Eigen::VectorXd& regressor) {
  return form.s2 + regressor.dot(form.K * regressor) +
         form.L.dot(regressor);
}

Eigen::MatrixXd bordered_matrix(const QuadraticForm& form) {
  const long dim = form.K.rows();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim + 1, dim + 1);
  m.topLeftCorner(dim, dim) = form.K;
  m.topRightCorner(dim, 1) = form.L / 2.0;
  m.bottomLeftCorner(1, dim) = form.L.transpose() / 2.0;
  m(dim, dim) = form.s2;
  return m;
}

} // namespace onarch
