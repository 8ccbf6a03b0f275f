#pragma once

#include "gplfm/kalman.hpp"
#include "gplfm/nelder_mead.hpp"

namespace gplfm {

// Student-t density T(x; mean, variance, dof) with variance read as squared
// scale. With dof = 1 this is the Cauchy density used for the default priors.
struct StudentTPrior {
  double mean = 0.0;
  double variance = 1.0;
  double dof = 1.0;

  double log_density(double x) const;
};

struct GpPriors {
  StudentTPrior alpha_prior{0.0, 1.0, 1.0};
  StudentTPrior ell_prior{100.0, 10.0, 1.0};
};

double log_prior(const GpHyperparams& theta, const GpPriors& priors);

// Measured data for a diagnosis run; all series share the grid t_k = k*dt.
struct DiagnosisData {
  SeriesInputs inputs;
  MeasurementSeq measurements;
  double dt = 0.0;

  int steps() const { return static_cast<int>(measurements.size()); }
};

// x0 = 0 with small structural variance; latent block starts at the GP
// stationary distribution N(0, diag(alpha)).
GaussianState default_initial_state(const GpHyperparams& theta, int n_struct,
                                    double struct_var = 1e-6);

// Negative log joint: -(filter log-likelihood + log prior). Returns +inf when
// the filter fails numerically.
double neg_log_posterior(const GpHyperparams& theta, const ContinuousSSM& ssm,
                         const DiagnosisData& data, const GpPriors& priors,
                         double jitter = 1e-14, double struct_var0 = 1e-6);

struct HyperOptConfig {
  int restarts = 5;
  int max_evals = 400;  // per restart
  uint64_t seed = 0;
  double bound_lo = 1e-15;
  double bound_hi = 1e15;
  double init_alpha_lo = 1e-2, init_alpha_hi = 1e2;  // restart draw ranges
  double init_ell_lo = 1e-2, init_ell_hi = 1e1;
  double ftol = 1e-7;
  double xtol = 1e-6;
};

struct HyperOptResult {
  GpHyperparams theta;
  double fval = 0.0;
  std::vector<double> trace;  // best objective after each evaluation, all restarts
  int evals = 0;
};

// Multi-start Nelder-Mead in log-space over (alpha, ell). Restart 0 starts at
// init; the rest draw log-uniform starts from the configured ranges.
HyperOptResult optimize_hyperparams(const std::function<double(const GpHyperparams&)>& objective,
                                    const GpHyperparams& init, const HyperOptConfig& config);

struct DiagnosisConfig {
  GpPriors priors;
  HyperOptConfig opt;
  double jitter = 1e-14;
  double struct_var0 = 1e-6;
  GpHyperparams init;  // empty = ones
};

struct DiagnosisResult {
  GpHyperparams theta_map;
  double map_objective = 0.0;
  FilterResult filter;
  SmootherResult smoother;
  std::vector<double> objective_trace;
  int n_struct = 0;
};

// MAP hyperparameter estimation followed by a filter+smoother pass at the
// optimum. The smoothed latent block is the misspecification-force estimate.
DiagnosisResult run_diagnosis(const PhysicalParams& params, const OutputSpec& outputs,
                              const MatrixXd& meas_noise_cov, const DiagnosisData& data,
                              const DiagnosisConfig& config);

}  // namespace gplfm
