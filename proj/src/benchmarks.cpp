#include "gplfm/benchmarks.hpp"

#include <cmath>
#include <complex>

#include "gplfm/rng.hpp"

namespace gplfm {

namespace {

struct LinearPart {
  MatrixXd mass, damping, stiffness;
};

MatrixXd chain_matrix(const VectorXd& coeffs) {
  const int n = static_cast<int>(coeffs.size());
  MatrixXd m = MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    m(i, i) += coeffs(i);
    if (i + 1 < n) {
      m(i, i) += coeffs(i + 1);
      m(i, i + 1) -= coeffs(i + 1);
      m(i + 1, i) -= coeffs(i + 1);
    }
  }
  return m;
}

LinearPart linear_part(const TrueSystem& system) {
  LinearPart lp;
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MdofLocalNlParams>) {
          lp.mass = MatrixXd(p.masses.asDiagonal());
          lp.stiffness = chain_matrix(p.stiffnesses);
          lp.damping = chain_matrix(p.dampings);
        } else {
          lp.mass = MatrixXd::Constant(1, 1, p.m);
          lp.damping = MatrixXd::Constant(1, 1, p.c);
          lp.stiffness = MatrixXd::Constant(1, 1, p.k);
        }
      },
      system.params);
  return lp;
}

// True misspecification force vector p(q, qd, b) per DOF.
VectorXd true_mfe(const TrueSystem& system, const VectorXd& q, const VectorXd& qd, double b) {
  return std::visit(
      [&](const auto& p) -> VectorXd {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, DuffingParams> || std::is_same_v<T, SilverboxParams>) {
          return VectorXd::Constant(1, p.k_nl * q(0) * q(0) * q(0));
        } else if constexpr (std::is_same_v<T, BoucWenParams>) {
          return VectorXd::Constant(1, b);
        } else {
          VectorXd v = VectorXd::Zero(q.size());
          v(0) = p.k_1g * q(0) * q(0) * q(0);
          if (q.size() >= 3 && p.c_23 != 0.0) {
            const double dv = qd(2) - qd(1);
            v(2) = p.c_23 * dv * std::abs(dv);
          }
          return v;
        }
      },
      system.params);
}

double boucwen_bdot(const BoucWenParams& p, double q, double qd, double b) {
  const double abs_b = std::abs(b);
  const double pow_nu = p.nu == 1.0 ? abs_b : std::pow(abs_b, p.nu);
  const double pow_nu_m1_b = p.nu == 1.0 ? b : std::pow(abs_b, p.nu - 1.0) * b;
  return p.alpha * qd - p.beta * (p.gamma * std::abs(q) * pow_nu_m1_b + p.delta * qd * pow_nu);
}

}  // namespace

int TrueSystem::dof_count() const {
  if (const auto* p = std::get_if<MdofLocalNlParams>(&params))
    return static_cast<int>(p->masses.size());
  return 1;
}

int TrueSystem::state_dim() const {
  return 2 * dof_count() + (kind() == TrueSystemKind::bouc_wen ? 1 : 0);
}

PhysicalParams nominal_model(const TrueSystem& system, const std::vector<int>& lf_dofs,
                             const std::vector<int>& input_dofs) {
  const LinearPart lp = linear_part(system);
  const int n = static_cast<int>(lp.mass.rows());
  PhysicalParams params;
  params.mass = lp.mass;
  params.damping = lp.damping;
  params.stiffness = lp.stiffness;
  params.lf_influence = MatrixXd::Zero(n, lf_dofs.size());
  for (size_t j = 0; j < lf_dofs.size(); ++j) params.lf_influence(lf_dofs[j], j) = 1.0;
  params.force_influence = MatrixXd::Zero(n, input_dofs.size());
  for (size_t j = 0; j < input_dofs.size(); ++j) params.force_influence(input_dofs[j], j) = 1.0;
  return params;
}

SimResult simulate_true(const TrueSystem& system, const SeriesInputs& inputs, double dt,
                        int substeps, const VectorXd& x0, const std::vector<int>& input_dofs) {
  const int n = system.dof_count();
  const int sd = system.state_dim();
  const int steps = inputs.steps();
  const int n_u = static_cast<int>(inputs.force.cols());
  if (n_u > 0 && static_cast<int>(input_dofs.size()) != n_u)
    throw std::invalid_argument("input_dofs must match force column count");
  if (!(dt > 0) || substeps < 1) throw std::invalid_argument("bad dt or substeps");

  const LinearPart lp = linear_part(system);
  const Eigen::LLT<MatrixXd> mass_llt(lp.mass);
  const bool hysteretic = system.kind() == TrueSystemKind::bouc_wen;

  // qdd = M^-1 (S_u u - C qd - K q - p) - 1 ugdd
  auto deriv = [&](const VectorXd& x, const VectorXd& u, double ug) {
    const VectorXd q = x.head(n);
    const VectorXd qd = x.segment(n, n);
    const double b = hysteretic ? x(2 * n) : 0.0;
    VectorXd rhs = -lp.damping * qd - lp.stiffness * q - true_mfe(system, q, qd, b);
    for (int j = 0; j < n_u; ++j) rhs(input_dofs[j]) += u(j);
    VectorXd dx(sd);
    dx.head(n) = qd;
    dx.segment(n, n) = mass_llt.solve(rhs) - VectorXd::Constant(n, ug);
    if (hysteretic)
      dx(2 * n) = boucwen_bdot(std::get<BoucWenParams>(system.params), q(0), qd(0), b);
    return dx;
  };

  SimResult res;
  res.dt = dt;
  res.states = MatrixXd::Zero(steps, sd);
  res.mfe = MatrixXd::Zero(steps, n);
  res.abs_accel = MatrixXd::Zero(steps, n);

  VectorXd x = x0.size() == sd ? x0 : VectorXd::Zero(sd);
  const double h = dt / substeps;
  for (int k = 0; k < steps; ++k) {
    if (!x.allFinite()) throw NumericalError("simulation blew up", k);
    res.states.row(k) = x;
    const VectorXd u = inputs.force_at(k);
    const double ug = inputs.ground_at(k);
    const VectorXd q = x.head(n);
    const VectorXd qd = x.segment(n, n);
    const VectorXd p = true_mfe(system, q, qd, hysteretic ? x(2 * n) : 0.0);
    res.mfe.row(k) = p;
    VectorXd rhs = -lp.damping * qd - lp.stiffness * q - p;
    for (int j = 0; j < n_u; ++j) rhs(input_dofs[j]) += u(j);
    res.abs_accel.row(k) = mass_llt.solve(rhs);

    if (k + 1 == steps) break;
    for (int s = 0; s < substeps; ++s) {
      const VectorXd k1 = deriv(x, u, ug);
      const VectorXd k2 = deriv(x + 0.5 * h * k1, u, ug);
      const VectorXd k3 = deriv(x + 0.5 * h * k2, u, ug);
      const VectorXd k4 = deriv(x + h * k3, u, ug);
      x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
  }
  return res;
}

MatrixXd clean_outputs(const TrueSystem& system, const SimResult& sim, const OutputSpec& outputs) {
  const int n = system.dof_count();
  const int steps = static_cast<int>(sim.states.rows());
  MatrixXd y(steps, outputs.size());
  for (size_t i = 0; i < outputs.size(); ++i) {
    const auto& ch = outputs[i];
    if (ch.dof < 0 || ch.dof >= n) throw std::invalid_argument("output channel dof out of range");
    switch (ch.kind) {
      case ChannelKind::displacement:
        y.col(i) = sim.states.col(ch.dof);
        break;
      case ChannelKind::velocity:
        y.col(i) = sim.states.col(n + ch.dof);
        break;
      case ChannelKind::acceleration:
        y.col(i) = sim.abs_accel.col(ch.dof);
        break;
    }
  }
  return y;
}

NoisyMeasurements add_measurement_noise(const MatrixXd& clean, double fraction, uint64_t seed) {
  NoisyMeasurements out;
  out.values = clean;
  out.noise_std = VectorXd(clean.cols());
  RandomStream rs(mix_seed(seed, 0x6e6f6973));
  for (Eigen::Index j = 0; j < clean.cols(); ++j) {
    const double rms = std::sqrt(clean.col(j).array().square().mean());
    out.noise_std(j) = fraction * rms;
    for (Eigen::Index i = 0; i < clean.rows(); ++i)
      out.values(i, j) += out.noise_std(j) * rs.gaussian();
  }
  return out;
}

MeasurementSeq to_measurement_seq(const MatrixXd& values) {
  MeasurementSeq seq;
  seq.reserve(values.rows());
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    VectorXd row = values.row(i);
    if (row.allFinite())
      seq.emplace_back(std::move(row));
    else
      seq.emplace_back(std::nullopt);
  }
  return seq;
}

double nmse_percent(const MatrixXd& truth, const MatrixXd& estimate) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols())
    throw std::invalid_argument("NMSE shape mismatch");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < truth.cols(); ++j) {
    const double mean = truth.col(j).mean();
    const double var = (truth.col(j).array() - mean).square().mean();
    if (var <= 0) throw std::invalid_argument("NMSE normalizer is zero");
    acc += (truth.col(j) - estimate.col(j)).array().square().mean() / var;
  }
  return 100.0 * acc / static_cast<double>(truth.cols());
}

double Envelope::value(double t) const {
  if (t < t_rise) {
    const double r = t / t_rise;
    return r * r;
  }
  if (t <= t_hold) return 1.0;
  return std::exp(-decay * (t - t_hold));
}

VectorXd kanai_tajimi(double dt, double duration, double omega_g, double zeta_g, double intensity,
                      const Envelope& env, uint64_t seed) {
  const int n = std::max(1, static_cast<int>(std::llround(duration / dt)));
  MatrixXd a(2, 2);
  a << 0.0, 1.0, -omega_g * omega_g, -2.0 * zeta_g * omega_g;
  MatrixXd b(2, 1);
  b << 0.0, 1.0;
  auto [f_d, b_d] = zoh_input_matrix(a, b, dt);

  RandomStream rs(mix_seed(seed, 0x6b74));
  const double w_std = intensity / std::sqrt(dt);
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  VectorXd ug(n);
  for (int k = 0; k < n; ++k) {
    ug(k) = env.value(k * dt) * (omega_g * omega_g * s(0) + 2.0 * zeta_g * omega_g * s(1));
    s = f_d * s + b_d * (w_std * rs.gaussian());
  }
  return ug;
}

VectorXd sine_signal(double dt, double duration, double amplitude, double freq_hz, double phase) {
  const int n = std::max(1, static_cast<int>(std::llround(duration / dt)));
  VectorXd x(n);
  for (int k = 0; k < n; ++k) x(k) = amplitude * std::sin(2.0 * M_PI * freq_hz * k * dt + phase);
  return x;
}

VectorXd butterworth_lowpass(const VectorXd& x, double cutoff_hz, double fs, int order) {
  if (cutoff_hz <= 0 || cutoff_hz >= 0.5 * fs)
    throw std::invalid_argument("cutoff must lie in (0, fs/2)");
  if (order < 1) throw std::invalid_argument("order must be >= 1");
  const double omega = std::tan(M_PI * cutoff_hz / fs);

  struct Biquad {
    double b0, b1, b2, a1, a2;  // a0 normalized to 1
  };
  std::vector<Biquad> sections;
  const int pairs = order / 2;
  for (int k = 1; k <= pairs; ++k) {
    const double theta = M_PI * (2.0 * k + order - 1.0) / (2.0 * order);
    const double a1c = -2.0 * omega * std::cos(theta);  // analog s coefficient
    const double a0c = omega * omega;
    const double d0 = 1.0 + a1c + a0c;
    sections.push_back({a0c / d0, 2.0 * a0c / d0, a0c / d0, (2.0 * a0c - 2.0) / d0,
                        (1.0 - a1c + a0c) / d0});
  }
  const bool odd = order % 2 == 1;

  VectorXd y = x;
  for (const auto& s : sections) {
    double w1 = 0.0, w2 = 0.0;  // direct form II
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double w0 = y(i) - s.a1 * w1 - s.a2 * w2;
      y(i) = s.b0 * w0 + s.b1 * w1 + s.b2 * w2;
      w2 = w1;
      w1 = w0;
    }
  }
  if (odd) {
    // first-order section for the remaining real pole at s = -omega
    const double d0 = 1.0 + omega;
    const double b0 = omega / d0, b1 = omega / d0, a1 = (omega - 1.0) / d0;
    double w1 = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double w0 = y(i) - a1 * w1;
      y(i) = b0 * w0 + b1 * w1;
      w1 = w0;
    }
  }
  return y;
}

VectorXd filtered_noise(double dt, double duration, double cutoff_hz, double rms, uint64_t seed,
                        int order) {
  const int n = std::max(1, static_cast<int>(std::llround(duration / dt)));
  RandomStream rs(mix_seed(seed, 0x666e));
  VectorXd white(n);
  for (int k = 0; k < n; ++k) white(k) = rs.gaussian();
  VectorXd y = butterworth_lowpass(white, cutoff_hz, 1.0 / dt, order);
  const double cur = std::sqrt(y.array().square().mean());
  if (cur > 0) y *= rms / cur;
  return y;
}

VectorXd multisine(double dt, double duration, double period_s, double f_max_hz, double rms,
                   uint64_t seed) {
  const int n = std::max(1, static_cast<int>(std::llround(duration / dt)));
  const double f0 = 1.0 / period_s;
  RandomStream rs(mix_seed(seed, 0x6d73));
  VectorXd y = VectorXd::Zero(n);
  int lines = 0;
  for (int j = 1; j * f0 <= f_max_hz; j += 2) {
    const double phase = rs.uniform(0.0, 2.0 * M_PI);
    for (int k = 0; k < n; ++k) y(k) += std::cos(2.0 * M_PI * j * f0 * k * dt + phase);
    ++lines;
  }
  if (lines == 0) throw std::invalid_argument("multisine has no spectral lines below f_max");
  const double cur = std::sqrt(y.array().square().mean());
  if (cur > 0) y *= rms / cur;
  return y;
}

}  // namespace gplfm
