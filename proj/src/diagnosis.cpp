#include "gplfm/diagnosis.hpp"

#include <cmath>

#include "gplfm/rng.hpp"

namespace gplfm {

double StudentTPrior::log_density(double x) const {
  const double s = std::sqrt(variance);
  const double z = (x - mean) / s;
  const double nu = dof;
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI) -
         std::log(s) - 0.5 * (nu + 1.0) * std::log1p(z * z / nu);
}

double log_prior(const GpHyperparams& theta, const GpPriors& priors) {
  double lp = 0.0;
  for (int j = 0; j < theta.size(); ++j) {
    lp += priors.alpha_prior.log_density(theta.alpha(j));
    lp += priors.ell_prior.log_density(theta.ell(j));
  }
  return lp;
}

GaussianState default_initial_state(const GpHyperparams& theta, int n_struct, double struct_var) {
  const int n_p = theta.size();
  GaussianState init;
  init.mean = VectorXd::Zero(n_struct + n_p);
  init.cov = MatrixXd::Zero(n_struct + n_p, n_struct + n_p);
  init.cov.topLeftCorner(n_struct, n_struct) =
      struct_var * MatrixXd::Identity(n_struct, n_struct);
  init.cov.bottomRightCorner(n_p, n_p) = theta.alpha.asDiagonal();
  return init;
}

double neg_log_posterior(const GpHyperparams& theta, const ContinuousSSM& ssm,
                         const DiagnosisData& data, const GpPriors& priors, double jitter,
                         double struct_var0) {
  try {
    const DiscreteSSM dssm = discretize(augment_with_gp(ssm, theta, jitter), data.dt);
    const GaussianState init = default_initial_state(theta, dssm.n_struct, struct_var0);
    const FilterResult filt = kalman_filter(dssm, init, data.inputs, data.measurements);
    return -(filt.log_likelihood + log_prior(theta, priors));
  } catch (const NumericalError&) {
    return std::numeric_limits<double>::infinity();
  }
}

HyperOptResult optimize_hyperparams(const std::function<double(const GpHyperparams&)>& objective,
                                    const GpHyperparams& init, const HyperOptConfig& config) {
  const int n_p = init.size();
  auto log_obj = [&](const VectorXd& v) { return objective(GpHyperparams::from_log_vector(v)); };

  NelderMeadOptions nm;
  nm.max_evals = config.max_evals;
  nm.ftol = config.ftol;
  nm.xtol = config.xtol;
  nm.lower = VectorXd::Constant(2 * n_p, std::log(config.bound_lo));
  nm.upper = VectorXd::Constant(2 * n_p, std::log(config.bound_hi));

  HyperOptResult best;
  best.fval = std::numeric_limits<double>::infinity();
  RandomStream rs(mix_seed(config.seed, 0x6f7074));
  for (int r = 0; r < std::max(1, config.restarts); ++r) {
    VectorXd x0(2 * n_p);
    if (r == 0) {
      x0 = init.to_log_vector();
    } else {
      for (int j = 0; j < n_p; ++j) {
        x0(j) = std::log(rs.log_uniform(config.init_alpha_lo, config.init_alpha_hi));
        x0(n_p + j) = std::log(rs.log_uniform(config.init_ell_lo, config.init_ell_hi));
      }
    }
    NelderMeadResult nm_res = nelder_mead(log_obj, x0, nm);
    best.evals += nm_res.evals;
    const double carry = best.trace.empty() ? std::numeric_limits<double>::infinity()
                                            : best.trace.back();
    for (double v : nm_res.trace) best.trace.push_back(std::min(v, carry));
    if (nm_res.fval < best.fval) {
      best.fval = nm_res.fval;
      best.theta = GpHyperparams::from_log_vector(nm_res.x);
    }
  }
  return best;
}

DiagnosisResult run_diagnosis(const PhysicalParams& params, const OutputSpec& outputs,
                              const MatrixXd& meas_noise_cov, const DiagnosisData& data,
                              const DiagnosisConfig& config) {
  const ContinuousSSM ssm = build_nominal_ssm(params, outputs, meas_noise_cov);
  const int n_p = ssm.lf_count();

  GpHyperparams init = config.init;
  if (init.size() != n_p) {
    init.alpha = VectorXd::Ones(n_p);
    init.ell = VectorXd::Ones(n_p);
  }
  auto objective = [&](const GpHyperparams& theta) {
    return neg_log_posterior(theta, ssm, data, config.priors, config.jitter, config.struct_var0);
  };
  HyperOptResult opt = optimize_hyperparams(objective, init, config.opt);
  if (!std::isfinite(opt.fval))
    throw NumericalError("hyperparameter optimization never found a finite objective");

  DiagnosisResult res;
  res.theta_map = opt.theta;
  res.map_objective = opt.fval;
  res.objective_trace = std::move(opt.trace);

  const DiscreteSSM dssm = discretize(augment_with_gp(ssm, res.theta_map, config.jitter), data.dt);
  res.n_struct = dssm.n_struct;
  const GaussianState x0 = default_initial_state(res.theta_map, dssm.n_struct, config.struct_var0);
  res.filter = kalman_filter(dssm, x0, data.inputs, data.measurements);
  res.smoother = rts_smoother(dssm, res.filter);
  return res;
}

}  // namespace gplfm
