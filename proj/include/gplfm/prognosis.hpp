#pragma once

#include "gplfm/bnn.hpp"
#include "gplfm/diagnosis.hpp"

namespace gplfm {

enum class SampleMode { sample, mean };

struct PrognosisConfig {
  GpPriors priors;
  HyperOptConfig opt;
  uint64_t seed = 0;
  SampleMode sample_mode = SampleMode::sample;
  int mc_predict = 64;   // weight ensemble size for the BNN predictive
  double jitter = 1e-14;
  double struct_var0 = 1e-6;
  GpHyperparams theta_init;          // usually the diagnosis MAP estimate
  double pseudo_cov_scale = 1.0;     // optional inflation of the predictive cov
};

struct PseudoMeasurement {
  VectorXd value;      // eta-tilde drawn from the BNN predictive
  MatrixXd noise_cov;  // predictive covariance, used as R
};

struct PseudoFilterResult {
  FilterResult filter;
  std::vector<PseudoMeasurement> pseudo;  // one per step
  double log_likelihood = 0.0;
};

// One forward pass of the pseudo-measurement filter: at every step the
// structural state is drawn from (or set to the mean of) the predicted
// marginal, pushed through the BNN predictive, and the latent block is
// updated with the resulting pseudo-measurement via H = [0 I].
// The weight ensemble is drawn once per pass; per-step noise streams are
// derived from (seed, k) so hyperparameter changes never reshuffle noise.
PseudoFilterResult pseudo_filter_pass(const DiscreteSSM& ssm, const BnnModel& bnn,
                                      const SeriesInputs& inputs, const GaussianState& init,
                                      const PrognosisConfig& config);

struct PrognosisResult {
  GpHyperparams theta_star;
  double map_objective = 0.0;
  std::vector<GaussianState> predicted_states;  // smoothed structural marginals
  std::vector<PseudoMeasurement> pseudo_measurements;
  std::vector<double> objective_trace;
  SmootherResult smoother;  // full augmented-state smoother output
};

// MAP re-estimation of the GP hyperparameters against the pseudo-measurement
// likelihood, followed by a final pass and RTS smoothing. The nominal model
// needs no measurement channels here; outputs come from the smoothed states.
PrognosisResult run_prognosis(const PhysicalParams& params, const BnnModel& bnn,
                              const SeriesInputs& inputs, double dt,
                              const PrognosisConfig& config);

}  // namespace gplfm
