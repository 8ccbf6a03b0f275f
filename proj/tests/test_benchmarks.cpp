#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <gplfm/benchmarks.hpp>
#include <gplfm/rng.hpp>

#include <unsupported/Eigen/FFT>

#include "oracles.hpp"

using namespace gplfm;

namespace {

VectorXd power_spectrum(const VectorXd& x) {
  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  std::vector<double> time(x.data(), x.data() + x.size());
  fft.fwd(freq, time);
  VectorXd power(x.size() / 2 + 1);
  for (int i = 0; i < power.size(); ++i) power(i) = std::norm(freq[i]);
  return power;
}

SeriesInputs force_only(const VectorXd& u) {
  SeriesInputs inputs;
  inputs.force = MatrixXd(u.size(), 1);
  inputs.force.col(0) = u;
  return inputs;
}

SeriesInputs no_input(int n) {
  SeriesInputs inputs;
  inputs.force = MatrixXd(n, 0);
  inputs.ground_accel = VectorXd::Zero(n);
  return inputs;
}

}  // namespace

TEST_CASE("simulate_true: linear free vibration matches the closed form") {
  TrueSystem sys{DuffingParams{1.0, 100.0, 0.2, 0.0}};
  CHECK(sys.dof_count() == 1);
  CHECK(sys.state_dim() == 2);
  const double dt = 0.001;
  const int n = 2001;
  VectorXd x0(2);
  x0 << 0.01, 0.0;
  const SimResult sim = simulate_true(sys, no_input(n), dt, 4, x0);
  REQUIRE(sim.states.rows() == n);
  double max_err = 0.0;
  for (int k = 0; k < n; ++k) {
    const double ref = oracle::damped_free_vibration(1.0, 100.0, 0.2, 0.01, 0.0, k * dt);
    REQUIRE(std::isfinite(ref));
    max_err = std::max(max_err, std::abs(sim.states(k, 0) - ref));
  }
  CHECK(max_err / 0.01 < 1e-5);
}

TEST_CASE("simulate_true: RK4 convergence order on free vibration") {
  TrueSystem sys{DuffingParams{1.0, 100.0, 0.2, 0.0}};
  VectorXd x0(2);
  x0 << 0.01, 0.0;
  const double dt = 0.02;
  const int n = 101;  // 2 seconds
  auto final_error = [&](int substeps) {
    const SimResult sim = simulate_true(sys, no_input(n), dt, substeps, x0);
    const double ref =
        oracle::damped_free_vibration(1.0, 100.0, 0.2, 0.01, 0.0, (n - 1) * dt);
    return std::abs(sim.states(n - 1, 0) - ref);
  };
  const double e1 = final_error(1);
  const double e2 = final_error(2);
  const double order = std::log2(e1 / e2);
  CHECK(order > 3.5);
  CHECK(order < 4.5);
}

TEST_CASE("simulate_true: Duffing misspecification force and acceleration identities") {
  TrueSystem sys{DuffingParams{1.0, 100.0, 0.2, 1000.0}};
  const double dt = 0.005;
  const VectorXd u = sine_signal(dt, 4.0, 2.0, 1.0);
  SeriesInputs inputs = force_only(u);
  RandomStream rs(5);
  inputs.ground_accel = VectorXd(u.size());
  for (int k = 0; k < u.size(); ++k) inputs.ground_accel(k) = 0.3 * rs.gaussian();

  const SimResult sim = simulate_true(sys, inputs, dt, 4, VectorXd(), {0});
  for (int k = 0; k < sim.states.rows(); ++k) {
    const double q = sim.states(k, 0), v = sim.states(k, 1);
    CHECK(sim.mfe(k, 0) == doctest::Approx(1000.0 * q * q * q).epsilon(1e-12));
    // absolute acceleration identity: qdd_abs = (u - c v - k q - k_nl q^3)/m
    const double expect = u(k) - 0.2 * v - 100.0 * q - 1000.0 * q * q * q;
    CHECK(sim.abs_accel(k, 0) == doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("simulate_true: Bouc-Wen hysteresis dissipates energy") {
  TrueSystem sys{BoucWenParams{}};
  CHECK(sys.state_dim() == 3);
  const double dt = 0.0005;
  const VectorXd u = sine_signal(dt, 4.0, 120.0, 1.0);
  const SimResult sim = simulate_true(sys, force_only(u), dt, 4, VectorXd(), {0});
  REQUIRE(sim.states.allFinite());
  // hysteretic variable is reported as the misspecification force
  for (int k = 0; k < sim.states.rows(); k += 100)
    CHECK(sim.mfe(k, 0) == doctest::Approx(sim.states(k, 2)).epsilon(1e-12));

  // loop area over the last full cycle, integral of b dq
  const int per = static_cast<int>(std::lround(1.0 / dt));
  const int end = static_cast<int>(sim.states.rows()) - 1;
  double area = 0.0;
  for (int k = end - per; k < end; ++k) {
    const double db_q = sim.states(k + 1, 0) - sim.states(k, 0);
    area += 0.5 * (sim.states(k, 2) + sim.states(k + 1, 2)) * db_q;
  }
  const double scale =
      sim.states.col(0).cwiseAbs().maxCoeff() * sim.states.col(2).cwiseAbs().maxCoeff();
  CHECK(std::abs(area) > 0.05 * scale);
}

TEST_CASE("simulate_true: 3-DOF local nonlinearities appear in the right entries") {
  MdofLocalNlParams p;
  p.masses = VectorXd::Constant(3, 1.0);
  p.stiffnesses = VectorXd::Constant(3, 100.0);
  p.dampings = VectorXd::Constant(3, 0.2);
  TrueSystem sys{p};
  CHECK(sys.dof_count() == 3);

  const double dt = 0.005;
  const int n = 600;
  RandomStream rs(71);
  SeriesInputs inputs;
  inputs.force = MatrixXd(n, 0);
  inputs.ground_accel = VectorXd(n);
  for (int k = 0; k < n; ++k) inputs.ground_accel(k) = 2.0 * rs.gaussian();

  const SimResult sim = simulate_true(sys, inputs, dt, 4);
  for (int k = 0; k < n; k += 7) {
    const double q0 = sim.states(k, 0);
    const double dv = sim.states(k, 5) - sim.states(k, 4);  // v2 - v1
    CHECK(sim.mfe(k, 0) == doctest::Approx(1000.0 * q0 * q0 * q0).epsilon(1e-12));
    CHECK(sim.mfe(k, 1) == 0.0);
    CHECK(sim.mfe(k, 2) == doctest::Approx(0.5 * dv * std::abs(dv)).epsilon(1e-12));
  }
}

TEST_CASE("nominal_model: chain matrices and influence maps") {
  MdofLocalNlParams p;
  p.masses = VectorXd::Constant(3, 1.0);
  p.stiffnesses = VectorXd::Constant(3, 100.0);
  p.dampings = VectorXd::Constant(3, 0.2);
  const PhysicalParams nominal = nominal_model(TrueSystem{p}, {0, 1, 2}, {});
  MatrixXd k_expect(3, 3);
  k_expect << 200, -100, 0, -100, 200, -100, 0, -100, 100;
  CHECK((nominal.stiffness - k_expect).norm() < 1e-12);
  CHECK((nominal.damping - 0.002 * k_expect).norm() < 1e-12);
  CHECK(nominal.mass.isIdentity(1e-12));
  CHECK(nominal.lf_influence.isIdentity(1e-12));
  CHECK(nominal.force_influence.cols() == 0);

  const PhysicalParams sdof = nominal_model(TrueSystem{DuffingParams{}}, {0}, {0});
  CHECK(sdof.stiffness(0, 0) == doctest::Approx(100.0));
  CHECK(sdof.damping(0, 0) == doctest::Approx(0.2));
  CHECK(sdof.force_influence(0, 0) == doctest::Approx(1.0));

  const PhysicalParams silver = nominal_model(TrueSystem{SilverboxParams{}}, {0}, {0});
  CHECK(silver.mass(0, 0) == doctest::Approx(5.3722e-6));
  CHECK(silver.stiffness(0, 0) == doctest::Approx(0.9932));
}

TEST_CASE("measurement noise: scaling and reproducibility") {
  const double dt = 0.001;
  const VectorXd s = sine_signal(dt, 5.0, 2.0, 1.3);
  MatrixXd clean(s.size(), 2);
  clean.col(0) = s;
  clean.col(1) = 3.0 * s;

  const NoisyMeasurements none = add_measurement_noise(clean, 0.0, 1);
  CHECK((none.values - clean).norm() == 0.0);
  CHECK(none.noise_std.norm() == 0.0);

  const NoisyMeasurements noisy = add_measurement_noise(clean, 0.05, 1);
  const double rms0 = std::sqrt(clean.col(0).squaredNorm() / clean.rows());
  CHECK(noisy.noise_std(0) == doctest::Approx(0.05 * rms0).epsilon(1e-12));
  CHECK(noisy.noise_std(1) == doctest::Approx(3.0 * 0.05 * rms0).epsilon(1e-12));
  const VectorXd resid = noisy.values.col(0) - clean.col(0);
  const double emp_std = std::sqrt(resid.squaredNorm() / resid.size());
  CHECK(emp_std > 0.9 * noisy.noise_std(0));
  CHECK(emp_std < 1.1 * noisy.noise_std(0));

  const NoisyMeasurements again = add_measurement_noise(clean, 0.05, 1);
  CHECK((again.values - noisy.values).norm() == 0.0);
}

TEST_CASE("to_measurement_seq: NaN rows become missing") {
  MatrixXd values(3, 2);
  values << 1.0, 2.0, std::nan(""), 4.0, 5.0, 6.0;
  const MeasurementSeq seq = to_measurement_seq(values);
  REQUIRE(seq.size() == 3);
  CHECK(seq[0].has_value());
  CHECK(!seq[1].has_value());
  CHECK(seq[2].has_value());
  CHECK((*seq[2])(1) == doctest::Approx(6.0));
}

TEST_CASE("nmse_percent: fixed points") {
  MatrixXd truth(4, 1);
  truth << 0.0, 2.0, 0.0, 2.0;
  CHECK(nmse_percent(truth, truth) == doctest::Approx(0.0));
  MatrixXd mean_est = MatrixXd::Constant(4, 1, 1.0);
  CHECK(nmse_percent(truth, mean_est) == doctest::Approx(100.0).epsilon(1e-12));
  MatrixXd zero_est = MatrixXd::Zero(4, 1);
  CHECK(nmse_percent(truth, zero_est) == doctest::Approx(200.0).epsilon(1e-12));

  // channel averaging
  MatrixXd truth2(4, 2);
  truth2.col(0) = truth;
  truth2.col(1) = truth;
  MatrixXd est2(4, 2);
  est2.col(0) = truth;
  est2.col(1) = mean_est;
  CHECK(nmse_percent(truth2, est2) == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("envelope: ramp, hold, decay") {
  const Envelope env;
  CHECK(env.value(0.0) == doctest::Approx(0.0));
  CHECK(env.value(2.0) == doctest::Approx(0.25));
  CHECK(env.value(4.0) == doctest::Approx(1.0));
  CHECK(env.value(20.0) == doctest::Approx(1.0));
  CHECK(env.value(50.0) == doctest::Approx(std::exp(-1.5)).epsilon(1e-12));
}

TEST_CASE("kanai_tajimi: length, determinism, spectral peak near the filter frequency") {
  const double dt = 0.005, duration = 60.0;
  const double omega_g = 4.0 * M_PI;  // 2 Hz
  const VectorXd zero = kanai_tajimi(dt, duration, omega_g, 0.3, 0.0, Envelope{}, 9);
  CHECK(zero.size() == 12000);
  CHECK(zero.norm() == 0.0);

  const VectorXd a = kanai_tajimi(dt, duration, omega_g, 0.3, 1.0, Envelope{}, 9);
  const VectorXd b = kanai_tajimi(dt, duration, omega_g, 0.3, 1.0, Envelope{}, 9);
  CHECK((a - b).norm() == 0.0);
  CHECK(a.allFinite());
  CHECK(a.cwiseAbs().maxCoeff() > 0.0);

  // averaged periodogram over 8 segments; peak should sit near 2 Hz
  const int seg = 1500;
  VectorXd avg = VectorXd::Zero(seg / 2 + 1);
  for (int s = 0; s < 8; ++s) avg += power_spectrum(a.segment(s * seg, seg));
  const double df = 1.0 / (seg * dt);
  int peak = 1;
  for (int i = 1; i < avg.size(); ++i)
    if (avg(i) > avg(peak)) peak = i;
  const double peak_hz = peak * df;
  CHECK(peak_hz > 1.6);
  CHECK(peak_hz < 2.4);
}

TEST_CASE("butterworth_lowpass: unity DC gain and stop-band rejection") {
  for (int order : {4, 5}) {
    const VectorXd step = butterworth_lowpass(VectorXd::Ones(4000), 10.0, 200.0, order);
    CHECK(step.tail(100).maxCoeff() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(step.tail(100).minCoeff() == doctest::Approx(1.0).epsilon(1e-6));
  }

  RandomStream rs(123);
  VectorXd white(8192);
  for (int i = 0; i < white.size(); ++i) white(i) = rs.gaussian();
  const double fs = 200.0, cutoff = 10.0;
  const VectorXd filtered = butterworth_lowpass(white, cutoff, fs, 4);
  const VectorXd power = power_spectrum(filtered);
  const double df = fs / filtered.size();
  double total = 0.0, above = 0.0;
  for (int i = 0; i < power.size(); ++i) {
    total += power(i);
    if (i * df > 2.0 * cutoff) above += power(i);
  }
  CHECK(above / total < 0.01);
}

TEST_CASE("filtered_noise: exact RMS scaling and band limitation") {
  const double dt = 0.005;
  const VectorXd x = filtered_noise(dt, 20.0, 5.0, 2.5, 77);
  const double rms = std::sqrt(x.squaredNorm() / x.size());
  CHECK(rms == doctest::Approx(2.5).epsilon(1e-9));
  const VectorXd power = power_spectrum(x);
  const double df = (1.0 / dt) / x.size();
  double total = 0.0, above = 0.0;
  for (int i = 0; i < power.size(); ++i) {
    total += power(i);
    if (i * df > 10.0) above += power(i);
  }
  CHECK(above / total < 0.02);
}

TEST_CASE("multisine: periodic, odd harmonics only, exact RMS") {
  const double dt = 0.001, period = 0.5;
  const VectorXd x = multisine(dt, 2.0, period, 100.0, 1.5, 99);
  const double rms = std::sqrt(x.squaredNorm() / x.size());
  CHECK(rms == doctest::Approx(1.5).epsilon(1e-9));

  const int per = static_cast<int>(std::lround(period / dt));
  for (int k = 0; k < per; k += 13)
    CHECK(x(k) == doctest::Approx(x(k + per)).epsilon(1e-9));

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> freq;
  std::vector<double> one_period(x.data(), x.data() + per);
  fft.fwd(freq, one_period);
  // base frequency 2 Hz: odd lines present, even lines absent
  CHECK(std::abs(freq[1]) > 1e-6);
  CHECK(std::abs(freq[3]) > 1e-6);
  CHECK(std::abs(freq[2]) < 1e-8 * std::abs(freq[1]));
  CHECK(std::abs(freq[4]) < 1e-8 * std::abs(freq[1]));
  CHECK(std::abs(freq[0]) < 1e-8 * std::abs(freq[1]));

  const VectorXd y = multisine(dt, 2.0, period, 100.0, 1.5, 99);
  CHECK((x - y).norm() == 0.0);
}

TEST_CASE("clean_outputs reads the requested channels") {
  TrueSystem sys{DuffingParams{1.0, 100.0, 0.2, 0.0}};
  VectorXd x0(2);
  x0 << 0.01, 0.0;
  const SimResult sim = simulate_true(sys, no_input(50), 0.005, 4, x0);
  OutputSpec outputs = {{ChannelKind::displacement, 0},
                        {ChannelKind::velocity, 0},
                        {ChannelKind::acceleration, 0}};
  const MatrixXd y = clean_outputs(sys, sim, outputs);
  REQUIRE(y.cols() == 3);
  CHECK((y.col(0) - sim.states.col(0)).norm() == 0.0);
  CHECK((y.col(1) - sim.states.col(1)).norm() == 0.0);
  CHECK((y.col(2) - sim.abs_accel.col(0)).norm() == 0.0);
}
