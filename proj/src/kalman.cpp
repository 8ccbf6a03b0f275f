#include "gplfm/kalman.hpp"

#include <cmath>

#include "gplfm/rng.hpp"

namespace gplfm {

namespace {

void check_dims(const DiscreteSSM& ssm, const GaussianState& init, const SeriesInputs& inputs,
                const MeasurementSeq& measurements) {
  const int d = ssm.state_dim();
  if (init.mean.size() != d || init.cov.rows() != d || init.cov.cols() != d)
    throw std::invalid_argument("initial state dimension mismatch");
  const int n = static_cast<int>(measurements.size());
  if (inputs.force.cols() > 0 && inputs.force.rows() != n)
    throw std::invalid_argument("force series length mismatch");
  if (inputs.ground_accel.size() > 0 && inputs.ground_accel.size() != n)
    throw std::invalid_argument("ground accel series length mismatch");
  if (inputs.force.cols() != ssm.b_ud.cols())
    throw std::invalid_argument("force column count mismatch");
  for (const auto& y : measurements)
    if (y && y->size() != ssm.output_dim())
      throw std::invalid_argument("measurement dimension mismatch");
}

// Joseph-form measurement update; returns the log-likelihood contribution.
double update_step(const DiscreteSSM& ssm, const VectorXd& y, const VectorXd& u, int k,
                   GaussianState& state, VectorXd& innovation, MatrixXd& innovation_cov) {
  const MatrixXd& h = ssm.h_a;
  VectorXd y_pred = h * state.mean;
  if (u.size() > 0) y_pred += ssm.j_u * u;
  const VectorXd e = y - y_pred;
  const MatrixXd s = symmetrize(h * state.cov * h.transpose() + ssm.meas_noise_cov);
  auto llt = safe_llt(s, k);
  const MatrixXd k_gain = state.cov * h.transpose() * llt.solve(MatrixXd::Identity(s.rows(), s.cols()));
  state.mean += k_gain * e;
  const MatrixXd i_kh = MatrixXd::Identity(state.cov.rows(), state.cov.cols()) - k_gain * h;
  state.cov = symmetrize(i_kh * state.cov * i_kh.transpose() +
                         k_gain * ssm.meas_noise_cov * k_gain.transpose());
  innovation = e;
  innovation_cov = s;
  const double log_det = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  const double maha = e.dot(llt.solve(e));
  return -0.5 * (log_det + maha + e.size() * std::log(2.0 * M_PI));
}

}  // namespace

FilterResult kalman_filter(const DiscreteSSM& ssm, const GaussianState& init,
                           const SeriesInputs& inputs, const MeasurementSeq& measurements) {
  check_dims(ssm, init, inputs, measurements);
  const int n = static_cast<int>(measurements.size());

  FilterResult res;
  res.predicted.reserve(n);
  res.filtered.reserve(n);
  res.innovations.assign(n, VectorXd(0));
  res.innovation_covs.assign(n, MatrixXd(0, 0));

  GaussianState state{init.mean, symmetrize(init.cov)};
  for (int k = 0; k < n; ++k) {
    if (k > 0) {
      VectorXd mean = ssm.f_d * state.mean + ssm.b_gd * inputs.ground_at(k - 1);
      if (ssm.b_ud.cols() > 0) mean += ssm.b_ud * inputs.force_at(k - 1);
      state.mean = mean;
      state.cov = symmetrize(ssm.f_d * state.cov * ssm.f_d.transpose() + ssm.q_d);
    }
    res.predicted.push_back(state);
    if (measurements[k]) {
      res.log_likelihood += update_step(ssm, *measurements[k], inputs.force_at(k), k, state,
                                        res.innovations[k], res.innovation_covs[k]);
    }
    res.filtered.push_back(state);
  }
  return res;
}

SmootherResult rts_smoother(const DiscreteSSM& ssm, const FilterResult& filt) {
  const int n = filt.steps();
  SmootherResult res;
  res.smoothed.resize(n);
  if (n == 0) return res;
  res.gains.resize(n - 1);
  res.smoothed[n - 1] = filt.filtered[n - 1];
  for (int k = n - 2; k >= 0; --k) {
    const GaussianState& f = filt.filtered[k];
    const GaussianState& pred = filt.predicted[k + 1];
    auto llt = safe_llt(pred.cov, k + 1);
    const MatrixXd gain =
        llt.solve(ssm.f_d * f.cov).transpose();  // P_f F' P_pred^-1 via (P_pred^-1 F P_f)'
    const GaussianState& s_next = res.smoothed[k + 1];
    res.smoothed[k].mean = f.mean + gain * (s_next.mean - pred.mean);
    res.smoothed[k].cov =
        symmetrize(f.cov + gain * (s_next.cov - pred.cov) * gain.transpose());
    res.gains[k] = gain;
  }
  return res;
}

std::pair<MatrixXd, MatrixXd> sample_smoothed_marginals(const SmootherResult& smooth,
                                                        int split_dim, int count, uint64_t seed) {
  const int n = static_cast<int>(smooth.smoothed.size());
  if (n == 0 || count <= 0) return {MatrixXd(0, 0), MatrixXd(0, 0)};
  const int d = static_cast<int>(smooth.smoothed[0].mean.size());
  if (split_dim < 0 || split_dim > d) throw std::invalid_argument("split_dim out of range");

  MatrixXd first(n * count, split_dim);
  MatrixXd second(n * count, d - split_dim);
  for (int k = 0; k < n; ++k) {
    RandomStream rs(mix_seed(seed, static_cast<uint64_t>(k)));
    const MatrixXd sqrt_cov = psd_sqrt(smooth.smoothed[k].cov);
    for (int s = 0; s < count; ++s) {
      VectorXd eps(d);
      for (int i = 0; i < d; ++i) eps(i) = rs.gaussian();
      const VectorXd x = smooth.smoothed[k].mean + sqrt_cov * eps;
      first.row(k * count + s) = x.head(split_dim);
      second.row(k * count + s) = x.tail(d - split_dim);
    }
  }
  return {first, second};
}

}  // namespace gplfm
