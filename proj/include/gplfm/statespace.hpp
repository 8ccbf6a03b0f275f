#pragma once

#include <vector>

#include "gplfm/linalg.hpp"

namespace gplfm {

// Linear structural model M qdd + C qd + K q = S_u u - S_p p - M 1 ugdd, with
// p the unknown misspecification forces entering through lf_influence (S_p)
// and u the known inputs entering through force_influence (S_u).
struct PhysicalParams {
  MatrixXd mass;             // n x n, SPD
  MatrixXd damping;          // n x n
  MatrixXd stiffness;        // n x n
  MatrixXd lf_influence;     // n x n_p
  MatrixXd force_influence;  // n x n_u (may have zero columns)

  int dof_count() const { return static_cast<int>(mass.rows()); }
  int lf_count() const { return static_cast<int>(lf_influence.cols()); }
  int input_count() const { return static_cast<int>(force_influence.cols()); }

  // throws std::invalid_argument on dimension mismatch or non-SPD mass
  void validate() const;
};

enum class ChannelKind { displacement, velocity, acceleration };

struct OutputChannel {
  ChannelKind kind;
  int dof;
};

using OutputSpec = std::vector<OutputChannel>;

// Matern-1/2 GP hyperparameters per latent force channel: stationary variance
// alpha_j and length-scale ell_j (both > 0).
struct GpHyperparams {
  VectorXd alpha;
  VectorXd ell;

  int size() const { return static_cast<int>(alpha.size()); }
  VectorXd to_log_vector() const;
  static GpHyperparams from_log_vector(const VectorXd& v);
};

// Structural state-space model with x = [q; qd] and outputs
// y = H x + J_p p + J_u u (+ noise); acceleration channels report absolute
// acceleration, so the ground term cancels and never appears in the output.
struct ContinuousSSM {
  MatrixXd a_c;   // 2n x 2n
  MatrixXd b_pc;  // 2n x n_p
  MatrixXd b_uc;  // 2n x n_u
  MatrixXd b_gc;  // 2n x 1
  MatrixXd h;     // n_y x 2n
  MatrixXd j_p;   // n_y x n_p
  MatrixXd j_u;   // n_y x n_u
  MatrixXd meas_noise_cov;  // n_y x n_y

  int state_dim() const { return static_cast<int>(a_c.rows()); }
  int lf_count() const { return static_cast<int>(b_pc.cols()); }
  int output_dim() const { return static_cast<int>(h.rows()); }
};

// GP-augmented model with state x^a = [q; qd; eta].
struct AugmentedSSM {
  MatrixXd f_c;      // (2n+n_p) x (2n+n_p)
  MatrixXd b_uc;     // (2n+n_p) x n_u
  MatrixXd b_gc;     // (2n+n_p) x 1
  MatrixXd q_c;      // process noise spectral density
  MatrixXd h_a;      // n_y x (2n+n_p)
  MatrixXd j_u;      // n_y x n_u
  MatrixXd meas_noise_cov;
  int n_struct;  // 2n
  int n_latent;  // n_p

  int state_dim() const { return n_struct + n_latent; }
};

struct DiscreteSSM {
  MatrixXd f_d;
  MatrixXd b_ud;
  MatrixXd b_gd;
  MatrixXd q_d;
  MatrixXd h_a;
  MatrixXd j_u;
  MatrixXd meas_noise_cov;
  double dt;
  int n_struct;
  int n_latent;

  int state_dim() const { return n_struct + n_latent; }
  int output_dim() const { return static_cast<int>(h_a.rows()); }
};

// Assembles the nominal structural SSM from physical matrices and an output
// specification; meas_noise_cov may be 0 x 0 when no outputs are observed.
ContinuousSSM build_nominal_ssm(const PhysicalParams& params, const OutputSpec& outputs,
                                const MatrixXd& meas_noise_cov);

// Appends the Matern-1/2 SDE block: f_c = [[A_c, B_pc], [0, -diag(1/ell)]],
// q_c = blkdiag(jitter I_2n, diag(2 alpha_j / ell_j)), h_a = [H, J_p].
AugmentedSSM augment_with_gp(const ContinuousSSM& ssm, const GpHyperparams& theta,
                             double jitter = 1e-14);

// Exact ZOH discretization: F_d = expm(F_c dt), input matrices via the block
// exponential, Q_d via Van Loan.
DiscreteSSM discretize(const AugmentedSSM& ssm, double dt);

}  // namespace gplfm
