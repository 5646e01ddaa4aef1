#pragma once

#include <vector>

#include "onarch/filter.hpp"
#include "onarch/model.hpp"
#include "onarch/returns.hpp"

namespace onarch {

/// Unit-variance Student log-density of a return with conditional
/// variance sigma2 (full normalization included).
double student_loglik(double sigma2, double r, double nu);

/// The two variance-dependent terms alone, for likelihood reports that
/// exclude the nu normalization constant.
double student_loglik_eq7(double sigma2, double r, double nu);

/// The normalization constant by itself (full = eq7 + constant).
double student_constant(double nu);

/// Per-point derivatives of the full log-density.
struct StudentDerivs {
  double l = 0;       // log-density
  double ds = 0;      // d/d sigma2
  double dss = 0;     // d2/d sigma2^2
  double dnu = 0;     // d/d nu
  double dsnu = 0;    // d2/d sigma2 d nu
  double dnunu = 0;   // d2/d nu^2
};

StudentDerivs student_derivs(double sigma2, double r, double nu);

enum class Target { day, night, daily };

Target target_from_name(const std::string& name);
std::string target_name(Target target);

struct LikelihoodReport {
  double loglik_per_point = 0.0;      // full convention
  double loglik_per_point_eq7 = 0.0;  // without the normalization constant
  long n_points = 0;
  long negative_variance_count = 0;
  bool valid = false;  // no negative variances at contributing points
};

LikelihoodReport panel_loglik(const EquationParams& params, Side side,
                              const ReturnPanel& panel);
LikelihoodReport panel_loglik(const DailyArchParams& params,
                              const ReturnPanel& panel);

/// The filter inputs and density target for one likelihood target.
/// Day and night share the two return streams and differ in the
/// evaluated return; the daily model runs the same machinery with the
/// daily return in the rd slot, a zero rn stream and the strictly
/// causal layout.
struct TargetData {
  Eigen::MatrixXd rd, rn;       // filter inputs
  Eigen::MatrixXd target_r;     // return under the density
  MaskMatrix mask;              // validity of target_r
};

TargetData make_target_data(const ReturnPanel& panel, Target target);

/// Position-space product channels of the variance equation; x_nd and
/// x_dn carry their factor 2, so sigma2 is exactly
/// s2 + sum_ch sum_a c_ch[a] x_ch_t[a].
enum Channel { kDD = 0, kNN = 1, kND = 2, kDN = 3, kLD = 4, kLN = 5 };
constexpr int kChannels = 6;

enum class PassLevel { value, gradient, hessian };

/// A parameter's sensitivity for Hessian passes: d sigma2 / d theta as
/// position weights on one channel.
struct JacobianColumn {
  Channel channel;
  Eigen::VectorXd weights;  // size q + 1
};

/// One sweep over the panel: log-likelihood, and on request the
/// f'-weighted and mixed-weighted position adjoints per channel plus
/// the dense blocks of the Hessian in the Jacobian columns. All sums
/// run over valid target points past the warm-up, accumulated per
/// stock and reduced in stock order (bit-stable under any thread
/// count).
struct PanelPass {
  double sum_loglik = 0.0, sum_eq7 = 0.0;
  long n_points = 0;
  long negative_count = 0;

  // gradient level
  Eigen::VectorXd adj[kChannels];  // sum_t f'_t x_ch_t[a]
  double sum_f1 = 0.0;             // sum f'   (gradient of s2)
  double sum_dnu = 0.0;

  // hessian level
  Eigen::VectorXd madj[kChannels];  // sum_t dsnu_t x_ch_t[a]
  double sum_f2 = 0.0;              // sum f''  (s2 x s2)
  double sum_m = 0.0;               // sum dsnu (s2 x nu)
  double sum_dnunu = 0.0;
  // Over the J = (jacobian columns..., 1) vector, the trailing 1 being
  // the s2 coordinate: sum f'' J J' and sum dsnu J.
  Eigen::MatrixXd h_jj;
  Eigen::VectorXd h_jnu;
};

PanelPass panel_pass(const PositionWeights& w, double s2, double nu,
                     const TargetData& data, PassLevel level,
                     const std::vector<JacobianColumn>& jacobian = {});

} // namespace onarch
