#pragma once

#include <variant>

#include "gplfm/kalman.hpp"

namespace gplfm {

// SDOF Duffing oscillator: m qdd + c qd + k q + k_nl q^3 = u - m ugdd.
struct DuffingParams {
  double m = 1.0, k = 100.0, c = 0.2, k_nl = 1000.0;
};

// Shear building chain with a cubic spring to ground at DOF 0 and a quadratic
// damper between DOFs 1 and 2 (0-based).
struct MdofLocalNlParams {
  VectorXd masses, stiffnesses, dampings;  // per storey
  double k_1g = 1000.0;                    // cubic ground spring at DOF 0
  double c_23 = 0.5;                       // quadratic damper between DOFs 1 and 2
};

// Duffing form of the identified Silverbox circuit.
struct SilverboxParams {
  double m = 5.3722e-6, k = 0.9932, c = 2.1905e-4, k_nl = 3.4239;
};

// Hysteretic SDOF: m qdd + c qd + k q + b = u with
// bdot = alpha qd - beta (gamma |q| |b|^(nu-1) b + delta qd |b|^nu).
struct BoucWenParams {
  double m = 1.0, c = 10.0, k = 5e4;
  double alpha = 5e4, beta = 1e3, gamma = 0.8, delta = -1.1, nu = 1.0;
};

using TrueSystemParams =
    std::variant<DuffingParams, MdofLocalNlParams, SilverboxParams, BoucWenParams>;

enum class TrueSystemKind { sdof_duffing, mdof_local_nl, silverbox, bouc_wen };

struct TrueSystem {
  TrueSystemParams params;

  TrueSystemKind kind() const { return static_cast<TrueSystemKind>(params.index()); }
  int dof_count() const;
  int state_dim() const;  // 2n, +1 for the hysteretic variable
};

// Linear nominal model of the true system (the misspecified digital twin).
// lf_dofs selects where latent forces act; input_dofs where known forces act
// (empty = ground excitation only).
PhysicalParams nominal_model(const TrueSystem& system, const std::vector<int>& lf_dofs,
                             const std::vector<int>& input_dofs);

struct SimResult {
  MatrixXd states;     // N x state_dim
  MatrixXd mfe;        // N x n, true misspecification force per DOF
  MatrixXd abs_accel;  // N x n, absolute accelerations
  double dt = 0.0;
};

// Fixed-step RK4 with ZOH inputs and x4 internal substeps (outputs decimated
// back to the input grid). input_dofs maps force columns onto DOFs and must
// match the force column count. Throws NumericalError with the step index on
// non-finite states.
SimResult simulate_true(const TrueSystem& system, const SeriesInputs& inputs, double dt,
                        int substeps = 4, const VectorXd& x0 = VectorXd(),
                        const std::vector<int>& input_dofs = {});

// Clean output channels read off a simulation.
MatrixXd clean_outputs(const TrueSystem& system, const SimResult& sim, const OutputSpec& outputs);

struct NoisyMeasurements {
  MatrixXd values;     // N x n_y
  VectorXd noise_std;  // per channel, fraction * RMS of the clean channel
};

NoisyMeasurements add_measurement_noise(const MatrixXd& clean, double fraction, uint64_t seed);

MeasurementSeq to_measurement_seq(const MatrixXd& values);

// Normalized mean squared error in percent, averaged over channels; the
// normalizer is the per-channel population variance of the truth.
double nmse_percent(const MatrixXd& truth, const MatrixXd& estimate);

// --- excitation generators ---

struct Envelope {
  double t_rise = 4.0;   // (t/t_rise)^2 ramp
  double t_hold = 40.0;  // unit gain until here
  double decay = 0.15;   // exp(-decay (t - t_hold)) after
  double value(double t) const;
};

// Kanai-Tajimi filtered white-noise ground acceleration with deterministic
// envelope; intensity is the driving white-noise standard deviation scale.
VectorXd kanai_tajimi(double dt, double duration, double omega_g, double zeta_g, double intensity,
                      const Envelope& env, uint64_t seed);

VectorXd sine_signal(double dt, double duration, double amplitude, double freq_hz,
                     double phase = 0.0);

// Gaussian white noise low-passed by a Butterworth filter and scaled to the
// requested RMS. cutoff_hz must be below Nyquist.
VectorXd filtered_noise(double dt, double duration, double cutoff_hz, double rms, uint64_t seed,
                        int order = 4);

// Random-phase odd-harmonic multisine on a base period of period_s seconds,
// lines up to f_max_hz, scaled to the requested RMS.
VectorXd multisine(double dt, double duration, double period_s, double f_max_hz, double rms,
                   uint64_t seed);

// Causal Butterworth low-pass (bilinear transform, biquad cascade); exposed
// for reuse and spectrum tests.
VectorXd butterworth_lowpass(const VectorXd& x, double cutoff_hz, double fs, int order = 4);

}  // namespace gplfm
