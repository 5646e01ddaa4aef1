#pragma once

#include <cstdint>

#include "onarch/model.hpp"
#include "onarch/returns.hpp"

namespace onarch {

struct SimConfig {
  long n_stocks = 1;
  long horizon = 0;           // emitted days
  std::uint64_t seed = 0;
  long burn_in = -1;          // < 0: max(10q, 5000)
  bool force = false;         // simulate even if the model is unstable
  bool abort_on_negative = true;  // post-burn-in negative variance policy
};

struct SimResult {
  ReturnPanel panel;
  // Negative variances during burn-in are floored to zero (the zero
  // history start can undershoot before the feedback warms up) and
  // counted here; they never touch emitted dates.
  long burnin_floored = 0;
  // Post-burn-in negatives, only populated when abort_on_negative is
  // off; emitted returns at such dates are zero.
  long negative_count = 0;
  double min_sigma2_d = 0.0, min_sigma2_n = 0.0;  // over emitted dates
};

/// Unit-variance Student draws (classical Student scaled by
/// sqrt((nu-2)/nu)).
Eigen::VectorXd sample_student(double nu, long n, std::uint64_t seed);

/// Sequential generation, per date: overnight first from strictly past
/// history, then intra-day seeing the fresh overnight at position 0.
/// Per-stock streams are keyed by (seed, stock), so any parallel
/// schedule produces the identical panel.
SimResult simulate_panel(const BivariateModel& model, const SimConfig& config);

SimResult simulate_panel(const DailyArchParams& params,
                         const SimConfig& config);

} // namespace onarch
