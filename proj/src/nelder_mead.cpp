#include "gplfm/nelder_mead.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gplfm {

using Eigen::VectorXd;

namespace {

VectorXd clamp_to_box(VectorXd x, const NelderMeadOptions& opts) {
  if (opts.lower.size() > 0) x = x.cwiseMax(opts.lower);
  if (opts.upper.size() > 0) x = x.cwiseMin(opts.upper);
  return x;
}

}  // namespace

NelderMeadResult nelder_mead(const std::function<double(const VectorXd&)>& f, const VectorXd& x0,
                             const NelderMeadOptions& opts) {
  const int n = static_cast<int>(x0.size());
  NelderMeadResult res;
  double best_so_far = std::numeric_limits<double>::infinity();

  auto eval = [&](const VectorXd& x) {
    double v = f(x);
    if (!std::isfinite(v)) v = std::numeric_limits<double>::infinity();
    ++res.evals;
    best_so_far = std::min(best_so_far, v);
    res.trace.push_back(best_so_far);
    return v;
  };

  std::vector<VectorXd> simplex(n + 1);
  std::vector<double> fvals(n + 1);
  simplex[0] = clamp_to_box(x0, opts);
  fvals[0] = eval(simplex[0]);
  for (int i = 0; i < n; ++i) {
    VectorXd v = simplex[0];
    v(i) += opts.init_step;
    simplex[i + 1] = clamp_to_box(v, opts);
    fvals[i + 1] = eval(simplex[i + 1]);
  }

  std::vector<int> order(n + 1);
  while (res.evals < opts.max_evals) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) { return fvals[a] < fvals[b]; });
    const int lo = order[0], hi = order[n], second_hi = order[n - 1];

    double diameter = 0.0;
    for (int i = 1; i <= n; ++i)
      diameter = std::max(diameter, (simplex[order[i]] - simplex[lo]).norm());
    const double fspread = std::abs(fvals[hi] - fvals[lo]);
    if (fspread < opts.ftol && diameter < opts.xtol) break;

    VectorXd centroid = VectorXd::Zero(n);
    for (int i = 0; i <= n; ++i)
      if (i != hi) centroid += simplex[i];
    centroid /= n;

    const VectorXd reflected = clamp_to_box(centroid + (centroid - simplex[hi]), opts);
    const double f_ref = eval(reflected);
    if (f_ref < fvals[lo]) {
      const VectorXd expanded = clamp_to_box(centroid + 2.0 * (centroid - simplex[hi]), opts);
      const double f_exp = eval(expanded);
      if (f_exp < f_ref) {
        simplex[hi] = expanded;
        fvals[hi] = f_exp;
      } else {
        simplex[hi] = reflected;
        fvals[hi] = f_ref;
      }
    } else if (f_ref < fvals[second_hi]) {
      simplex[hi] = reflected;
      fvals[hi] = f_ref;
    } else {
      const bool outside = f_ref < fvals[hi];
      const VectorXd base = outside ? reflected : simplex[hi];
      const VectorXd contracted = clamp_to_box(centroid + 0.5 * (base - centroid), opts);
      const double f_con = eval(contracted);
      if (f_con < std::min(f_ref, fvals[hi])) {
        simplex[hi] = contracted;
        fvals[hi] = f_con;
      } else {
        for (int i = 0; i <= n; ++i) {
          if (i == lo) continue;
          simplex[i] = clamp_to_box(simplex[lo] + 0.5 * (simplex[i] - simplex[lo]), opts);
          fvals[i] = eval(simplex[i]);
          if (res.evals >= opts.max_evals) break;
        }
      }
    }
  }

  int best = 0;
  for (int i = 1; i <= n; ++i)
    if (fvals[i] < fvals[best]) best = i;
  res.x = simplex[best];
  res.fval = fvals[best];
  return res;
}

}  // namespace gplfm
