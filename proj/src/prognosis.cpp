#include "gplfm/prognosis.hpp"

#include <cmath>

#include "gplfm/rng.hpp"

namespace gplfm {

namespace {

// Joseph-form update with the pseudo-measurement model H = [0 I], R = pred
// covariance; returns the log-likelihood contribution.
double pseudo_update(GaussianState& state, const VectorXd& eta_tilde, const MatrixXd& r_cov,
                     int k) {
  const int n_p = static_cast<int>(eta_tilde.size());
  const int d = static_cast<int>(state.mean.size());
  const VectorXd e = eta_tilde - state.mean.tail(n_p);
  const MatrixXd s = symmetrize(state.cov.bottomRightCorner(n_p, n_p) + r_cov);
  auto llt = safe_llt(s, k);
  // K = P H' S^-1, with H' selecting the last n_p columns
  const MatrixXd k_gain =
      llt.solve(state.cov.rightCols(n_p).transpose()).transpose();  // d x n_p
  state.mean += k_gain * e;
  MatrixXd i_kh = MatrixXd::Identity(d, d);
  i_kh.rightCols(n_p) -= k_gain;
  state.cov = symmetrize(i_kh * state.cov * i_kh.transpose() + k_gain * r_cov * k_gain.transpose());
  const double log_det = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return -0.5 * (log_det + e.dot(llt.solve(e)) + n_p * std::log(2.0 * M_PI));
}

VectorXd draw_gaussian(const VectorXd& mean, const MatrixXd& cov, RandomStream& rs) {
  const MatrixXd sqrt_cov = psd_sqrt(cov);
  VectorXd eps(mean.size());
  for (Eigen::Index i = 0; i < eps.size(); ++i) eps(i) = rs.gaussian();
  return mean + sqrt_cov * eps;
}

}  // namespace

PseudoFilterResult pseudo_filter_pass(const DiscreteSSM& ssm, const BnnModel& bnn,
                                      const SeriesInputs& inputs, const GaussianState& init,
                                      const PrognosisConfig& config) {
  const int n = inputs.steps();
  const int ns = ssm.n_struct;
  const int n_p = ssm.n_latent;
  if (bnn.topology.input_dim != ns || bnn.topology.target_dim != n_p)
    throw std::invalid_argument("BNN topology does not match the state-space model");

  const MatrixXd ensemble = sample_weights(bnn.vp, config.mc_predict, mix_seed(config.seed, 0x5741));

  PseudoFilterResult res;
  res.filter.predicted.reserve(n);
  res.filter.filtered.reserve(n);
  res.filter.innovations.assign(n, VectorXd(0));
  res.filter.innovation_covs.assign(n, MatrixXd(0, 0));
  res.pseudo.reserve(n);

  GaussianState state{init.mean, symmetrize(init.cov)};
  for (int k = 0; k < n; ++k) {
    if (k > 0) {
      VectorXd mean = ssm.f_d * state.mean + ssm.b_gd * inputs.ground_at(k - 1);
      if (ssm.b_ud.cols() > 0) mean += ssm.b_ud * inputs.force_at(k - 1);
      state.mean = mean;
      state.cov = symmetrize(ssm.f_d * state.cov * ssm.f_d.transpose() + ssm.q_d);
    }
    res.filter.predicted.push_back(state);

    RandomStream rs(mix_seed(config.seed, 0x70730000ull + static_cast<uint64_t>(k)));
    VectorXd x_star;
    if (config.sample_mode == SampleMode::sample) {
      x_star = draw_gaussian(state.mean.head(ns), state.cov.topLeftCorner(ns, ns), rs);
    } else {
      x_star = state.mean.head(ns);
    }
    PredictiveGaussian pred = ensemble_predictive(bnn, ensemble, x_star);
    if (config.pseudo_cov_scale != 1.0) pred.cov *= config.pseudo_cov_scale;
    const VectorXd eta_tilde = config.sample_mode == SampleMode::sample
                                   ? draw_gaussian(pred.mean, pred.cov, rs)
                                   : pred.mean;

    res.filter.innovations[k] = eta_tilde - state.mean.tail(n_p);
    res.log_likelihood += pseudo_update(state, eta_tilde, pred.cov, k);
    res.filter.innovation_covs[k] =
        symmetrize(res.filter.predicted.back().cov.bottomRightCorner(n_p, n_p) + pred.cov);
    res.filter.filtered.push_back(state);
    res.pseudo.push_back({eta_tilde, pred.cov});
  }
  res.filter.log_likelihood = res.log_likelihood;
  return res;
}

PrognosisResult run_prognosis(const PhysicalParams& params, const BnnModel& bnn,
                              const SeriesInputs& inputs, double dt,
                              const PrognosisConfig& config) {
  const ContinuousSSM ssm = build_nominal_ssm(params, OutputSpec{}, MatrixXd(0, 0));
  const int n_p = ssm.lf_count();

  GpHyperparams init = config.theta_init;
  if (init.size() != n_p) {
    init.alpha = VectorXd::Ones(n_p);
    init.ell = VectorXd::Ones(n_p);
  }

  auto objective = [&](const GpHyperparams& theta) -> double {
    try {
      const DiscreteSSM dssm = discretize(augment_with_gp(ssm, theta, config.jitter), dt);
      const GaussianState x0 = default_initial_state(theta, dssm.n_struct, config.struct_var0);
      const PseudoFilterResult pass = pseudo_filter_pass(dssm, bnn, inputs, x0, config);
      return -(pass.log_likelihood + log_prior(theta, config.priors));
    } catch (const NumericalError&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  HyperOptResult opt = optimize_hyperparams(objective, init, config.opt);
  if (!std::isfinite(opt.fval))
    throw NumericalError("prognosis hyperparameter optimization never found a finite objective");

  PrognosisResult res;
  res.theta_star = opt.theta;
  res.map_objective = opt.fval;
  res.objective_trace = std::move(opt.trace);

  const DiscreteSSM dssm = discretize(augment_with_gp(ssm, res.theta_star, config.jitter), dt);
  const GaussianState x0 = default_initial_state(res.theta_star, dssm.n_struct, config.struct_var0);
  PseudoFilterResult final_pass = pseudo_filter_pass(dssm, bnn, inputs, x0, config);
  res.pseudo_measurements = std::move(final_pass.pseudo);
  res.smoother = rts_smoother(dssm, final_pass.filter);

  const int ns = dssm.n_struct;
  res.predicted_states.reserve(res.smoother.smoothed.size());
  for (const auto& s : res.smoother.smoothed)
    res.predicted_states.push_back(
        {s.mean.head(ns), symmetrize(s.cov.topLeftCorner(ns, ns))});
  return res;
}

}  // namespace gplfm
