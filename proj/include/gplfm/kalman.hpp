#pragma once

#include <optional>
#include <vector>

#include "gplfm/statespace.hpp"

namespace gplfm {

struct GaussianState {
  VectorXd mean;
  MatrixXd cov;
};

// Exogenous inputs on the uniform grid t_k = k*dt. force is N x n_u (zero
// columns when no inputs), ground_accel length N (size 0 means no ground
// motion).
struct SeriesInputs {
  MatrixXd force;
  VectorXd ground_accel;

  int steps() const {
    return static_cast<int>(force.cols() > 0 ? force.rows() : ground_accel.size());
  }
  VectorXd force_at(int k) const {
    return force.cols() > 0 ? VectorXd(force.row(k)) : VectorXd(0);
  }
  double ground_at(int k) const { return ground_accel.size() > 0 ? ground_accel(k) : 0.0; }
};

using MeasurementSeq = std::vector<std::optional<VectorXd>>;

// Time convention: step 0 is an update of the prior (no prediction); for
// k >= 1 the filter predicts with inputs at k-1 (ZOH) and updates with the
// measurement at k (feedthrough uses inputs at k). Missing measurements copy
// the prediction. innovations/innovation_covs hold empty entries at steps
// without a measurement.
struct FilterResult {
  std::vector<GaussianState> predicted;
  std::vector<GaussianState> filtered;
  std::vector<VectorXd> innovations;
  std::vector<MatrixXd> innovation_covs;
  double log_likelihood = 0.0;

  int steps() const { return static_cast<int>(filtered.size()); }
};

struct SmootherResult {
  std::vector<GaussianState> smoothed;
  std::vector<MatrixXd> gains;  // length N-1; gains[k] maps step k+1 back to k
};

FilterResult kalman_filter(const DiscreteSSM& ssm, const GaussianState& init,
                           const SeriesInputs& inputs, const MeasurementSeq& measurements);

SmootherResult rts_smoother(const DiscreteSSM& ssm, const FilterResult& filt);

// Draws count samples per step from each joint smoothed Gaussian and splits
// them at split_dim: first matrix is (N*count) x split_dim, second the
// remainder. Per-step streams are derived from (seed, k).
std::pair<MatrixXd, MatrixXd> sample_smoothed_marginals(const SmootherResult& smooth,
                                                        int split_dim, int count, uint64_t seed);

}  // namespace gplfm
