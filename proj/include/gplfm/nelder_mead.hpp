#pragma once

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace gplfm {

struct NelderMeadOptions {
  int max_evals = 500;
  double ftol = 1e-9;   // stop when simplex f-spread falls below this
  double xtol = 1e-9;   // ... or simplex diameter does
  double init_step = 0.5;
  Eigen::VectorXd lower;  // optional box; empty = unbounded
  Eigen::VectorXd upper;
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double fval = 0.0;
  int evals = 0;
  std::vector<double> trace;  // best objective after each evaluation
};

// Downhill simplex with standard reflection/expansion/contraction/shrink
// coefficients (1, 2, 0.5, 0.5). Bounds are enforced by clamping candidate
// points. Non-finite objective values are treated as +inf.
NelderMeadResult nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                             const Eigen::VectorXd& x0, const NelderMeadOptions& opts);

}  // namespace gplfm
