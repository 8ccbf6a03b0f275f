#pragma once

#include <vector>

#include "gplfm/linalg.hpp"

namespace gplfm {

enum class Activation { relu, tanh_act };

// MLP topology for the state -> misspecification-force map. The head emits
// target_dim mean entries plus a packed lower-triangular Cholesky factor
// (softplus on the diagonal) of the predictive covariance.
struct BnnTopology {
  int input_dim = 0;
  std::vector<int> hidden;
  Activation activation = Activation::relu;
  int target_dim = 0;

  int chol_dim() const { return target_dim * (target_dim + 1) / 2; }
  int output_dim() const { return target_dim + chol_dim(); }
  std::vector<int> layer_sizes() const;
  int param_count() const;
};

// Mean-field Gaussian variational posterior over the flattened weights;
// sigma_q = softplus(rho_q).
struct VariationalParams {
  VectorXd mu_q;
  VectorXd rho_q;

  VectorXd sigma_q() const;
};

// Per-dimension input standardization (population statistics); zero-variance
// dimensions get scale 1.
struct Normalization {
  VectorXd shift;
  VectorXd scale;

  VectorXd apply(const VectorXd& x) const { return (x - shift).cwiseQuotient(scale); }
  VectorXd invert(const VectorXd& z) const { return z.cwiseProduct(scale) + shift; }
};

Normalization fit_normalization(const MatrixXd& inputs);

// Training set for the map stage; inputs are stored normalized.
struct MapDataset {
  MatrixXd inputs;   // N_m x input_dim, normalized
  MatrixXd targets;  // N_m x target_dim
  Normalization normalization;

  int size() const { return static_cast<int>(inputs.rows()); }
};

MapDataset make_map_dataset(const MatrixXd& raw_inputs, const MatrixXd& targets);

struct BnnOutput {
  VectorXd mean;
  MatrixXd chol;  // lower triangular, positive diagonal

  MatrixXd covariance() const { return chol * chol.transpose(); }
};

// Deterministic pass with the given flat weight vector; x must already be
// normalized.
BnnOutput forward(const BnnTopology& topology, const VectorXd& weights, const VectorXd& x);

// Gaussian NLL of target eta under the network output, plus its gradient with
// respect to the flat weights (accumulated into grad when provided).
double gaussian_nll(const BnnOutput& out, const VectorXd& eta);

// KL(q || N(0, I)) in closed form.
double kl_divergence(const VariationalParams& vp);

struct ElboParts {
  double loss = 0.0;       // per-sample scaled: mean NLL + KL / dataset_size
  double data_term = 0.0;  // mean NLL over the batch
  double kl_term = 0.0;    // KL / dataset_size
};

// Monte Carlo minibatch ELBO loss (negative ELBO contribution). batch lists
// row indices into the dataset; mc_samples weight draws are shared across the
// batch. Pass grad_mu/grad_rho to also get gradients (resized and filled).
ElboParts elbo_minibatch(const VariationalParams& vp, const BnnTopology& topology,
                         const MapDataset& data, const std::vector<int>& batch, int mc_samples,
                         uint64_t seed, VectorXd* grad_mu = nullptr, VectorXd* grad_rho = nullptr);

struct TrainConfig {
  int batch_size = 256;
  int mc_samples = 4;
  double learning_rate = 1e-3;
  double epsilon = 1e-4;  // relative epoch-loss change stop
  int max_epochs = 2000;
  uint64_t seed = 0;
  double init_sigma = 0.05;
  double init_mu_std = 0.1;  // scaled by 1/sqrt(fan_in) per layer
};

struct TrainResult {
  VariationalParams vp;
  std::vector<double> epoch_loss;  // epoch-accumulated batch totals
  int epochs = 0;
  bool converged = false;
};

VariationalParams init_variational(const BnnTopology& topology, const TrainConfig& config);

TrainResult train_bnn(const MapDataset& data, const BnnTopology& topology,
                      const TrainConfig& config);

// Serializable trained model.
struct BnnModel {
  BnnTopology topology;
  VariationalParams vp;
  Normalization normalization;
};

struct PredictiveGaussian {
  VectorXd mean;
  MatrixXd cov;
};

// S x param_count matrix of weight draws from q.
MatrixXd sample_weights(const VariationalParams& vp, int count, uint64_t seed);

// Moment-matched posterior predictive over a fixed weight ensemble; x_raw is
// an unnormalized input.
PredictiveGaussian ensemble_predictive(const BnnModel& model, const MatrixXd& ensemble,
                                       const VectorXd& x_raw);

// Convenience: draws a fresh ensemble of size mc_samples and moment-matches.
PredictiveGaussian posterior_predictive(const BnnModel& model, const VectorXd& x_raw,
                                        int mc_samples, uint64_t seed);

}  // namespace gplfm
