#include "gplfm/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

#include "gplfm/rng.hpp"

namespace gplfm {

namespace fs = std::filesystem;

namespace {

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

json stage_block(const json& config, const std::string& stage) {
  if (config.contains(stage) && config[stage].is_object()) return config[stage];
  return json::object();
}

template <typename T>
T get_or(const json& j, const std::string& key, const T& fallback) {
  if (j.contains(key)) return j.at(key).get<T>();
  return fallback;
}

VectorXd time_column(int n, double dt) {
  VectorXd t(n);
  for (int i = 0; i < n; ++i) t(i) = i * dt;
  return t;
}

std::string channel_name(const OutputChannel& ch) {
  const char* kind = ch.kind == ChannelKind::displacement ? "disp"
                     : ch.kind == ChannelKind::velocity   ? "vel"
                                                          : "acc";
  return kind + std::to_string(ch.dof);
}

// State variable names for the augmented model: q0.., v0.., eta0..
std::vector<std::string> state_names(int dofs, const std::vector<int>& lf_dofs) {
  std::vector<std::string> names;
  for (int i = 0; i < dofs; ++i) names.push_back("q" + std::to_string(i));
  for (int i = 0; i < dofs; ++i) names.push_back("v" + std::to_string(i));
  for (int d : lf_dofs) names.push_back("eta" + std::to_string(d));
  return names;
}

struct BuiltExcitation {
  SeriesInputs inputs;
  std::vector<int> input_dofs;
  bool has_ground = false;
};

VectorXd one_signal(const json& exc, double dt, double duration, uint64_t seed) {
  const std::string kind = exc.at("kind").get<std::string>();
  const double scale = get_or(exc, "scale", 1.0);
  VectorXd sig;
  if (kind == "kanai_tajimi") {
    Envelope env;
    if (exc.contains("envelope")) {
      const json& e = exc["envelope"];
      env.t_rise = get_or(e, "t_rise", env.t_rise);
      env.t_hold = get_or(e, "t_hold", env.t_hold);
      env.decay = get_or(e, "decay", env.decay);
    }
    sig = kanai_tajimi(dt, duration, get_or(exc, "omega_g", 5.0 * M_PI),
                       get_or(exc, "zeta_g", 0.6), exc.at("intensity").get<double>(), env, seed);
  } else if (kind == "sine") {
    sig = sine_signal(dt, duration, exc.at("amplitude").get<double>(),
                      exc.at("freq_hz").get<double>(), get_or(exc, "phase", 0.0));
  } else if (kind == "filtered_white_noise") {
    sig = filtered_noise(dt, duration, get_or(exc, "cutoff_hz", 5.0),
                         exc.at("rms").get<double>(), seed, get_or(exc, "order", 4));
  } else if (kind == "multisine") {
    sig = multisine(dt, duration, exc.at("period_s").get<double>(),
                    exc.at("f_max_hz").get<double>(), exc.at("rms").get<double>(), seed);
  } else if (kind == "csv") {
    const CsvTable table = read_csv(exc.at("path").get<std::string>());
    const std::string col = exc.at("column").get<std::string>();
    auto it = std::find(table.columns.begin(), table.columns.end(), col);
    if (it == table.columns.end())
      throw std::runtime_error("excitation CSV has no column '" + col + "'");
    sig = table.values.col(it - table.columns.begin());
    const int want = std::max(1, static_cast<int>(std::llround(duration / dt)));
    if (sig.size() < want)
      throw std::runtime_error("excitation CSV shorter than requested duration");
    sig.conservativeResize(want);
  } else {
    throw std::runtime_error("unknown excitation kind '" + kind + "'");
  }
  if (exc.contains("ramp_to")) {
    // linear amplitude ramp from ramp_from (default 0) to ramp_to across the signal
    const double a0 = get_or(exc, "ramp_from", 0.0);
    const double a1 = exc.at("ramp_to").get<double>();
    for (Eigen::Index k = 0; k < sig.size(); ++k) {
      const double f = sig.size() > 1 ? static_cast<double>(k) / (sig.size() - 1) : 1.0;
      sig(k) *= a0 + (a1 - a0) * f;
    }
  }
  return scale * sig;
}

BuiltExcitation build_excitation(const json& block, double dt, double duration, uint64_t seed,
                                 int dof_count) {
  std::vector<json> entries;
  if (block.is_array())
    for (const auto& e : block) entries.push_back(e);
  else
    entries.push_back(block);

  BuiltExcitation built;
  std::vector<VectorXd> force_cols;
  int idx = 0;
  for (const auto& e : entries) {
    const std::string role = get_or<std::string>(e, "role", "ground");
    const VectorXd sig = one_signal(e, dt, duration, mix_seed(seed, 0xe0 + idx));
    if (role == "ground") {
      if (built.has_ground) throw std::runtime_error("multiple ground excitations");
      built.inputs.ground_accel = sig;
      built.has_ground = true;
    } else if (role == "force") {
      const int dof = e.at("dof").get<int>();
      if (dof < 0 || dof >= dof_count) throw std::runtime_error("excitation dof out of range");
      force_cols.push_back(sig);
      built.input_dofs.push_back(dof);
    } else {
      throw std::runtime_error("unknown excitation role '" + role + "'");
    }
    ++idx;
  }
  int n = 0;
  for (const auto& c : force_cols) n = std::max<int>(n, c.size());
  if (built.has_ground) n = std::max<int>(n, built.inputs.ground_accel.size());
  built.inputs.force.resize(n, force_cols.size());
  for (size_t j = 0; j < force_cols.size(); ++j) built.inputs.force.col(j) = force_cols[j];
  if (!built.has_ground) built.inputs.ground_accel.resize(0);
  return built;
}

MatrixXd pack_covariances(const std::vector<GaussianState>& states) {
  const int n = static_cast<int>(states.size());
  const int d = n ? static_cast<int>(states[0].mean.size()) : 0;
  MatrixXd packed(n, d * (d + 1) / 2);
  for (int k = 0; k < n; ++k) {
    int idx = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j) packed(k, idx++) = states[k].cov(i, j);
  }
  return packed;
}

MatrixXd unpack_covariance_row(const MatrixXd& packed, int row, int d) {
  MatrixXd cov(d, d);
  int idx = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j <= i; ++j) {
      cov(i, j) = packed(row, idx);
      cov(j, i) = packed(row, idx);
      ++idx;
    }
  return cov;
}

void write_state_series(const fs::path& path, const std::vector<GaussianState>& states, double dt,
                        const std::vector<std::string>& names) {
  const int n = static_cast<int>(states.size());
  const int d = n ? static_cast<int>(states[0].mean.size()) : 0;
  MatrixXd values(n, 1 + 2 * d);
  values.col(0) = time_column(n, dt);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < d; ++i) {
      values(k, 1 + 2 * i) = states[k].mean(i);
      values(k, 2 + 2 * i) = std::sqrt(std::max(0.0, states[k].cov(i, i)));
    }
  std::vector<std::string> cols{"t"};
  for (const auto& name : names) {
    cols.push_back(name + "_mean");
    cols.push_back(name + "_std");
  }
  write_csv(path, cols, values);
}

json base_sidecar(const RunContext& ctx, const std::string& stage, uint64_t stage_seed) {
  return json{{"stage", stage},
              {"tool_version", kToolVersion},
              {"config_hash", ctx.config_hash},
              {"seed", ctx.seed},
              {"stage_seed", stage_seed}};
}

void add_artifacts(json& sidecar, const fs::path& dir, const std::vector<std::string>& files) {
  json arts = json::object();
  for (const auto& f : files) arts[f] = file_hash(dir / f);
  sidecar["artifacts"] = arts;
}

// Reads a simulate-stage artifact directory back into filter-ready series.
struct LoadedData {
  SeriesInputs inputs;
  std::vector<int> input_dofs;
  MeasurementSeq measurements;
  MatrixXd measurement_values;
  VectorXd noise_std;
  double dt = 0.0;
  int steps = 0;
};

LoadedData load_stage_data(const fs::path& sim_dir) {
  LoadedData data;
  const json side = read_json(sim_dir / "simulate.json");
  data.dt = side.at("dt").get<double>();
  data.noise_std = vector_from_json(side.at("noise_std"));

  const CsvTable exc = read_csv(sim_dir / "excitation.csv");
  std::vector<VectorXd> force_cols;
  for (size_t c = 0; c < exc.columns.size(); ++c) {
    const std::string& name = exc.columns[c];
    if (name == "t") continue;
    if (name == "ground") {
      data.inputs.ground_accel = exc.values.col(c);
    } else if (name.rfind("f", 0) == 0) {
      data.input_dofs.push_back(std::stoi(name.substr(1)));
      force_cols.push_back(exc.values.col(c));
    }
  }
  data.steps = static_cast<int>(exc.values.rows());
  data.inputs.force.resize(data.steps, force_cols.size());
  for (size_t j = 0; j < force_cols.size(); ++j) data.inputs.force.col(j) = force_cols[j];

  const CsvTable meas = read_csv(sim_dir / "measurements.csv");
  data.measurement_values = meas.values.rightCols(meas.values.cols() - 1);
  data.measurements = to_measurement_seq(data.measurement_values);
  return data;
}

GpPriors priors_from_json(const json& block) {
  GpPriors priors;
  auto read_prior = [](const json& j, StudentTPrior& p) {
    p.mean = get_or(j, "mean", p.mean);
    p.variance = get_or(j, "variance", p.variance);
    p.dof = get_or(j, "dof", p.dof);
  };
  if (block.contains("alpha_prior")) read_prior(block["alpha_prior"], priors.alpha_prior);
  if (block.contains("ell_prior")) read_prior(block["ell_prior"], priors.ell_prior);
  return priors;
}

HyperOptConfig opt_from_json(const json& block, uint64_t seed) {
  HyperOptConfig opt;
  opt.restarts = get_or(block, "restarts", opt.restarts);
  opt.max_evals = get_or(block, "max_evals", opt.max_evals);
  opt.seed = seed;
  opt.bound_lo = get_or(block, "bound_lo", opt.bound_lo);
  opt.bound_hi = get_or(block, "bound_hi", opt.bound_hi);
  return opt;
}

}  // namespace

void RunContext::log(const std::string& line) const {
  if (!quiet) std::cout << line << "\n";
}

std::string config_hash(const json& config) {
  const std::string s = config.dump();
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return out;
}

OutputChannel parse_channel(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw std::runtime_error("bad channel '" + text + "', expected kind:dof");
  const std::string kind = text.substr(0, colon);
  OutputChannel ch;
  ch.dof = std::stoi(text.substr(colon + 1));
  if (kind == "acc")
    ch.kind = ChannelKind::acceleration;
  else if (kind == "disp")
    ch.kind = ChannelKind::displacement;
  else if (kind == "vel")
    ch.kind = ChannelKind::velocity;
  else
    throw std::runtime_error("bad channel kind '" + kind + "'");
  return ch;
}

SystemSetup parse_system(const json& system_config) {
  SystemSetup setup;
  const std::string kind = system_config.at("kind").get<std::string>();

  if (kind == "sdof_duffing" || kind == "silverbox") {
    if (kind == "sdof_duffing") {
      DuffingParams p;
      p.m = get_or(system_config, "m", p.m);
      p.k = get_or(system_config, "k", p.k);
      p.c = get_or(system_config, "c", p.c);
      p.k_nl = get_or(system_config, "k_nl", p.k_nl);
      setup.truth.params = p;
    } else {
      SilverboxParams p;
      p.m = get_or(system_config, "m", p.m);
      p.k = get_or(system_config, "k", p.k);
      p.c = get_or(system_config, "c", p.c);
      p.k_nl = get_or(system_config, "k_nl", p.k_nl);
      setup.truth.params = p;
    }
    setup.has_truth = true;
  } else if (kind == "mdof_local_nl") {
    MdofLocalNlParams p;
    p.masses = vector_from_json(system_config.at("masses"));
    p.stiffnesses = vector_from_json(system_config.at("stiffnesses"));
    p.dampings = vector_from_json(system_config.at("dampings"));
    p.k_1g = get_or(system_config, "k_1g", p.k_1g);
    p.c_23 = get_or(system_config, "c_23", p.c_23);
    setup.truth.params = p;
    setup.has_truth = true;
  } else if (kind == "bouc_wen") {
    BoucWenParams p;
    p.m = get_or(system_config, "m", p.m);
    p.c = get_or(system_config, "c", p.c);
    p.k = get_or(system_config, "k", p.k);
    p.alpha = get_or(system_config, "alpha", p.alpha);
    p.beta = get_or(system_config, "beta", p.beta);
    p.gamma = get_or(system_config, "gamma", p.gamma);
    p.delta = get_or(system_config, "delta", p.delta);
    p.nu = get_or(system_config, "nu", p.nu);
    setup.truth.params = p;
    setup.has_truth = true;
  } else if (kind == "custom") {
    setup.has_truth = false;
  } else {
    throw std::runtime_error("unknown system kind '" + kind + "'");
  }

  int dofs = 0;
  if (setup.has_truth) {
    dofs = setup.truth.dof_count();
    setup.lf_dofs = get_or(system_config, "lf_dofs", std::vector<int>{});
    if (setup.lf_dofs.empty())
      for (int i = 0; i < dofs; ++i) setup.lf_dofs.push_back(i);
    setup.nominal = nominal_model(setup.truth, setup.lf_dofs, {});
  } else {
    setup.nominal.mass = matrix_from_json(system_config.at("mass"));
    setup.nominal.damping = matrix_from_json(system_config.at("damping"));
    setup.nominal.stiffness = matrix_from_json(system_config.at("stiffness"));
    dofs = setup.nominal.dof_count();
    setup.lf_dofs = get_or(system_config, "lf_dofs", std::vector<int>{});
    if (setup.lf_dofs.empty())
      for (int i = 0; i < dofs; ++i) setup.lf_dofs.push_back(i);
    setup.nominal.lf_influence = MatrixXd::Zero(dofs, setup.lf_dofs.size());
    for (size_t j = 0; j < setup.lf_dofs.size(); ++j)
      setup.nominal.lf_influence(setup.lf_dofs[j], j) = 1.0;
    setup.nominal.force_influence = MatrixXd::Zero(dofs, 0);
  }

  for (const auto& ch : get_or(system_config, "measurements", std::vector<std::string>{}))
    setup.outputs.push_back(parse_channel(ch));
  setup.noise_fraction = get_or(system_config, "noise_fraction", 0.05);
  return setup;
}

fs::path stage_dir(const RunContext& ctx, const std::string& stage) {
  const json block = stage_block(ctx.config, stage);
  if (block.contains("use")) return fs::path(block.at("use").get<std::string>());
  return ctx.out_dir / stage;
}

json run_simulate_stage(const RunContext& ctx) {
  const double t0 = now_seconds();
  const SystemSetup setup = parse_system(ctx.config.at("system"));
  if (!setup.has_truth)
    throw std::runtime_error("simulate needs a benchmark system kind, not 'custom'");
  if (setup.outputs.empty()) throw std::runtime_error("system.measurements is empty");
  const json block = stage_block(ctx.config, "simulate");
  const double dt = block.at("dt").get<double>();
  const double duration = block.at("duration").get<double>();
  const int substeps = get_or(block, "substeps", 4);
  const uint64_t stage_seed = mix_seed(ctx.seed, 101);

  const BuiltExcitation exc = build_excitation(block.at("excitation"), dt, duration, stage_seed,
                                               setup.truth.dof_count());
  const SimResult sim =
      simulate_true(setup.truth, exc.inputs, dt, substeps, VectorXd(), exc.input_dofs);
  const MatrixXd clean = clean_outputs(setup.truth, sim, setup.outputs);
  const NoisyMeasurements noisy =
      add_measurement_noise(clean, setup.noise_fraction, stage_seed);

  const fs::path dir = ctx.out_dir / "simulate";
  const int n = exc.inputs.steps();
  const int dofs = setup.truth.dof_count();

  {
    std::vector<std::string> cols{"t"};
    MatrixXd values(n, 1 + (exc.has_ground ? 1 : 0) + exc.input_dofs.size());
    values.col(0) = time_column(n, dt);
    int c = 1;
    if (exc.has_ground) {
      cols.push_back("ground");
      values.col(c++) = exc.inputs.ground_accel;
    }
    for (size_t j = 0; j < exc.input_dofs.size(); ++j) {
      cols.push_back("f" + std::to_string(exc.input_dofs[j]));
      values.col(c++) = exc.inputs.force.col(j);
    }
    write_csv(dir / "excitation.csv", cols, values);
  }
  {
    std::vector<std::string> cols{"t"};
    for (int i = 0; i < dofs; ++i) cols.push_back("q" + std::to_string(i));
    for (int i = 0; i < dofs; ++i) cols.push_back("v" + std::to_string(i));
    if (setup.truth.kind() == TrueSystemKind::bouc_wen) cols.push_back("b");
    MatrixXd values(n, 1 + sim.states.cols());
    values.col(0) = time_column(n, dt);
    values.rightCols(sim.states.cols()) = sim.states;
    write_csv(dir / "truth_states.csv", cols, values);
  }
  {
    std::vector<std::string> cols{"t"};
    for (int i = 0; i < dofs; ++i) cols.push_back("p" + std::to_string(i));
    MatrixXd values(n, 1 + dofs);
    values.col(0) = time_column(n, dt);
    values.rightCols(dofs) = sim.mfe;
    write_csv(dir / "mfe_true.csv", cols, values);
  }
  std::vector<std::string> meas_cols{"t"};
  for (const auto& ch : setup.outputs) meas_cols.push_back(channel_name(ch));
  {
    MatrixXd values(n, 1 + clean.cols());
    values.col(0) = time_column(n, dt);
    values.rightCols(clean.cols()) = noisy.values;
    write_csv(dir / "measurements.csv", meas_cols, values);
    values.rightCols(clean.cols()) = clean;
    write_csv(dir / "measurements_clean.csv", meas_cols, values);
  }

  json side = base_sidecar(ctx, "simulate", stage_seed);
  side["dt"] = dt;
  side["duration"] = duration;
  side["steps"] = n;
  side["substeps"] = substeps;
  side["channels"] = std::vector<std::string>(meas_cols.begin() + 1, meas_cols.end());
  side["noise_std"] = to_json(noisy.noise_std);
  side["noise_fraction"] = setup.noise_fraction;
  side["seconds"] = now_seconds() - t0;
  add_artifacts(side, dir,
                {"excitation.csv", "truth_states.csv", "mfe_true.csv", "measurements.csv",
                 "measurements_clean.csv"});
  write_json(dir / "simulate.json", side);
  ctx.log("simulate: " + std::to_string(n) + " steps -> " + dir.string());
  return side;
}

json run_diagnose_stage(const RunContext& ctx) {
  const double t0 = now_seconds();
  SystemSetup setup = parse_system(ctx.config.at("system"));
  const json block = stage_block(ctx.config, "diagnose");
  const uint64_t stage_seed = mix_seed(ctx.seed, 202);

  LoadedData data_in;
  if (block.contains("io_csv")) {
    const IoSeries io = load_io_csv(block.at("io_csv").get<std::string>());
    int lo = 0, hi = static_cast<int>(io.input.size()) - 1;
    if (block.contains("slice")) {
      lo = block["slice"].at(0).get<int>();
      hi = block["slice"].at(1).get<int>();
    }
    if (lo < 0 || hi >= io.input.size() || hi < lo)
      throw std::runtime_error("diagnose.slice out of range");
    const int n = hi - lo + 1;
    data_in.dt = io.dt;
    data_in.steps = n;
    data_in.inputs.force = MatrixXd(io.input.segment(lo, n));
    data_in.input_dofs = {0};
    data_in.measurement_values = MatrixXd(io.output.segment(lo, n));
    data_in.measurements = to_measurement_seq(data_in.measurement_values);
    VectorXd rms(1);
    rms(0) = std::sqrt(data_in.measurement_values.col(0).array().square().mean());
    data_in.noise_std = setup.noise_fraction * rms;
  } else {
    data_in = load_stage_data(stage_dir(ctx, "simulate"));
  }
  if (setup.outputs.size() != static_cast<size_t>(data_in.measurement_values.cols()))
    throw std::runtime_error("system.measurements does not match measurement artifact columns");

  PhysicalParams params = setup.nominal;
  params.force_influence = MatrixXd::Zero(params.dof_count(), data_in.input_dofs.size());
  for (size_t j = 0; j < data_in.input_dofs.size(); ++j)
    params.force_influence(data_in.input_dofs[j], j) = 1.0;

  const MatrixXd r_cov = data_in.noise_std.array().square().matrix().asDiagonal();

  DiagnosisData data;
  data.inputs = data_in.inputs;
  data.measurements = data_in.measurements;
  data.dt = data_in.dt;

  DiagnosisConfig cfg;
  cfg.priors = priors_from_json(block);
  cfg.opt = opt_from_json(block, stage_seed);
  cfg.jitter = get_or(block, "jitter", cfg.jitter);
  cfg.struct_var0 = get_or(block, "struct_var0", cfg.struct_var0);
  if (block.contains("init"))
    cfg.init = hyperparams_from_json(block["init"]);

  const DiagnosisResult result = run_diagnosis(params, setup.outputs, r_cov, data, cfg);

  const fs::path dir = ctx.out_dir / "diagnose";
  const auto names = state_names(params.dof_count(), setup.lf_dofs);
  write_state_series(dir / "smoothed.csv", result.smoother.smoothed, data.dt, names);
  {
    const MatrixXd packed = pack_covariances(result.smoother.smoothed);
    std::vector<std::string> cols{"t"};
    const int d = static_cast<int>(result.smoother.smoothed[0].mean.size());
    for (int i = 0; i < d; ++i)
      for (int j = 0; j <= i; ++j)
        cols.push_back("c" + std::to_string(i) + "_" + std::to_string(j));
    MatrixXd values(packed.rows(), 1 + packed.cols());
    values.col(0) = time_column(static_cast<int>(packed.rows()), data.dt);
    values.rightCols(packed.cols()) = packed;
    write_csv(dir / "smoothed_cov.csv", cols, values);
  }
  {
    MatrixXd trace(result.objective_trace.size(), 2);
    for (size_t i = 0; i < result.objective_trace.size(); ++i) {
      trace(i, 0) = static_cast<double>(i);
      trace(i, 1) = result.objective_trace[i];
    }
    write_csv(dir / "objective_trace.csv", {"eval", "best_objective"}, trace);
  }
  json theta = to_json(result.theta_map);
  theta["map_objective"] = result.map_objective;
  theta["log_likelihood"] = result.filter.log_likelihood;
  write_json(dir / "theta_map.json", theta);

  json side = base_sidecar(ctx, "diagnose", stage_seed);
  side["dt"] = data.dt;
  side["steps"] = data.steps();
  side["n_struct"] = result.n_struct;
  side["n_latent"] = result.theta_map.size();
  side["state_names"] = names;
  side["lf_dofs"] = setup.lf_dofs;
  side["input_dofs"] = data_in.input_dofs;
  side["map_objective"] = result.map_objective;
  side["objective_evals"] = result.objective_trace.size();
  side["seconds"] = now_seconds() - t0;
  add_artifacts(side, dir,
                {"smoothed.csv", "smoothed_cov.csv", "objective_trace.csv", "theta_map.json"});
  write_json(dir / "diagnose.json", side);
  ctx.log("diagnose: objective " + std::to_string(result.map_objective) + " -> " + dir.string());
  return side;
}

json run_map_stage(const RunContext& ctx) {
  const double t0 = now_seconds();
  const json block = stage_block(ctx.config, "map");
  const uint64_t stage_seed = mix_seed(ctx.seed, 303);
  const fs::path diag_dir = stage_dir(ctx, "diagnose");

  const json diag_side = read_json(diag_dir / "diagnose.json");
  const int n_struct = diag_side.at("n_struct").get<int>();
  const int n_latent = diag_side.at("n_latent").get<int>();
  const double dt = diag_side.at("dt").get<double>();

  const CsvTable mean_table = read_csv(diag_dir / "smoothed.csv");
  const CsvTable cov_table = read_csv(diag_dir / "smoothed_cov.csv");
  const int steps = static_cast<int>(mean_table.values.rows());
  const int d = n_struct + n_latent;

  SmootherResult smooth;
  smooth.smoothed.resize(steps);
  const MatrixXd packed = cov_table.values.rightCols(cov_table.values.cols() - 1);
  for (int k = 0; k < steps; ++k) {
    GaussianState s;
    s.mean.resize(d);
    for (int i = 0; i < d; ++i) s.mean(i) = mean_table.values(k, 1 + 2 * i);
    s.cov = unpack_covariance_row(packed, k, d);
    smooth.smoothed[k] = std::move(s);
  }

  const int count = get_or(block, "samples_per_step", 5);
  auto [x_samples, eta_samples] =
      sample_smoothed_marginals(smooth, n_struct, count, mix_seed(stage_seed, 1));
  const MapDataset dataset = make_map_dataset(x_samples, eta_samples);

  BnnTopology topology;
  topology.input_dim = n_struct;
  topology.target_dim = n_latent;
  topology.hidden = get_or(block, "hidden", std::vector<int>{20, 10});
  topology.activation =
      get_or<std::string>(block, "activation", "relu") == "tanh" ? Activation::tanh_act
                                                                 : Activation::relu;

  TrainConfig train_cfg;
  train_cfg.batch_size = get_or(block, "batch_size", train_cfg.batch_size);
  train_cfg.mc_samples = get_or(block, "mc_samples", train_cfg.mc_samples);
  train_cfg.learning_rate = get_or(block, "learning_rate", train_cfg.learning_rate);
  train_cfg.epsilon = get_or(block, "epsilon", train_cfg.epsilon);
  train_cfg.max_epochs = get_or(block, "max_epochs", train_cfg.max_epochs);
  train_cfg.seed = mix_seed(stage_seed, 2);

  const TrainResult trained = train_bnn(dataset, topology, train_cfg);

  BnnModel model{topology, trained.vp, dataset.normalization};
  const fs::path dir = ctx.out_dir / "map";
  write_json(dir / "bnn_model.json", to_json(model));
  {
    MatrixXd trace(trained.epoch_loss.size(), 2);
    for (size_t i = 0; i < trained.epoch_loss.size(); ++i) {
      trace(i, 0) = static_cast<double>(i);
      trace(i, 1) = trained.epoch_loss[i];
    }
    write_csv(dir / "train_trace.csv", {"epoch", "loss"}, trace);
  }
  std::vector<std::string> artifacts{"bnn_model.json", "train_trace.csv"};
  if (get_or(block, "emit_samples", true)) {
    const auto names = diag_side.at("state_names").get<std::vector<std::string>>();
    std::vector<std::string> cols;
    for (int i = 0; i < n_struct; ++i) cols.push_back(names[i]);
    for (int i = 0; i < n_latent; ++i) cols.push_back(names[n_struct + i]);
    const int total = static_cast<int>(x_samples.rows());
    const int stride = std::max(1, total / 50000);
    MatrixXd values((total + stride - 1) / stride, d);
    for (int r = 0, w = 0; r < total; r += stride, ++w) {
      values.row(w).head(n_struct) = x_samples.row(r);
      values.row(w).tail(n_latent) = eta_samples.row(r);
    }
    write_csv(dir / "map_samples.csv", cols, values);
    artifacts.push_back("map_samples.csv");
  }

  json side = base_sidecar(ctx, "map", stage_seed);
  side["dt"] = dt;
  side["dataset_size"] = dataset.size();
  side["samples_per_step"] = count;
  side["epochs"] = trained.epochs;
  side["converged"] = trained.converged;
  side["final_epoch_loss"] = trained.epoch_loss.empty() ? 0.0 : trained.epoch_loss.back();
  side["param_count"] = topology.param_count();
  side["seconds"] = now_seconds() - t0;
  add_artifacts(side, dir, artifacts);
  write_json(dir / "map.json", side);
  ctx.log("map: trained " + std::to_string(trained.epochs) + " epochs -> " + dir.string());
  return side;
}

json run_predict_stage(const RunContext& ctx) {
  const double t0 = now_seconds();
  const SystemSetup setup = parse_system(ctx.config.at("system"));
  const json block = stage_block(ctx.config, "predict");
  const uint64_t stage_seed = mix_seed(ctx.seed, 404);

  const BnnModel model = bnn_model_from_json(read_json(stage_dir(ctx, "map") / "bnn_model.json"));

  const double dt = block.at("dt").get<double>();
  const double duration = block.at("duration").get<double>();
  const BuiltExcitation exc = build_excitation(block.at("excitation"), dt, duration, stage_seed,
                                               setup.nominal.dof_count());

  PhysicalParams params = setup.nominal;
  params.force_influence = MatrixXd::Zero(params.dof_count(), exc.input_dofs.size());
  for (size_t j = 0; j < exc.input_dofs.size(); ++j)
    params.force_influence(exc.input_dofs[j], j) = 1.0;

  PrognosisConfig cfg;
  cfg.priors = priors_from_json(block);
  cfg.opt = opt_from_json(block, stage_seed);
  cfg.opt.restarts = get_or(block, "restarts", 3);
  cfg.opt.max_evals = get_or(block, "max_evals", 200);
  cfg.seed = mix_seed(stage_seed, 3);
  cfg.mc_predict = get_or(block, "mc_predict", cfg.mc_predict);
  cfg.jitter = get_or(block, "jitter", cfg.jitter);
  cfg.sample_mode =
      get_or<std::string>(block, "sample_mode", "sample") == "mean" ? SampleMode::mean
                                                                    : SampleMode::sample;
  cfg.pseudo_cov_scale = get_or(block, "pseudo_cov_scale", 1.0);
  const fs::path diag_dir = stage_dir(ctx, "diagnose");
  if (fs::exists(diag_dir / "theta_map.json"))
    cfg.theta_init = hyperparams_from_json(read_json(diag_dir / "theta_map.json"));

  const PrognosisResult result = run_prognosis(params, model, exc.inputs, dt, cfg);

  const fs::path dir = ctx.out_dir / "predict";
  const int n = exc.inputs.steps();
  const auto names = state_names(params.dof_count(), setup.lf_dofs);
  write_state_series(dir / "predicted.csv", result.smoother.smoothed, dt, names);
  {
    std::vector<std::string> cols{"t"};
    MatrixXd values(n, 1 + (exc.has_ground ? 1 : 0) + exc.input_dofs.size());
    values.col(0) = time_column(n, dt);
    int c = 1;
    if (exc.has_ground) {
      cols.push_back("ground");
      values.col(c++) = exc.inputs.ground_accel;
    }
    for (size_t j = 0; j < exc.input_dofs.size(); ++j) {
      cols.push_back("f" + std::to_string(exc.input_dofs[j]));
      values.col(c++) = exc.inputs.force.col(j);
    }
    write_csv(dir / "excitation.csv", cols, values);
  }
  {
    const int n_p = static_cast<int>(result.theta_star.size());
    std::vector<std::string> cols{"t"};
    for (int j = 0; j < n_p; ++j) cols.push_back(names[2 * params.dof_count() + j] + "_tilde");
    for (int i = 0; i < n_p; ++i)
      for (int j = 0; j <= i; ++j)
        cols.push_back("r" + std::to_string(i) + "_" + std::to_string(j));
    MatrixXd values(n, cols.size());
    values.col(0) = time_column(n, dt);
    for (int k = 0; k < n; ++k) {
      int c = 1;
      for (int j = 0; j < n_p; ++j) values(k, c++) = result.pseudo_measurements[k].value(j);
      for (int i = 0; i < n_p; ++i)
        for (int j = 0; j <= i; ++j)
          values(k, c++) = result.pseudo_measurements[k].noise_cov(i, j);
    }
    write_csv(dir / "pseudo_measurements.csv", cols, values);
  }
  json theta = to_json(result.theta_star);
  theta["map_objective"] = result.map_objective;
  write_json(dir / "theta_star.json", theta);

  std::vector<std::string> artifacts{"predicted.csv", "excitation.csv",
                                     "pseudo_measurements.csv", "theta_star.json"};

  json side = base_sidecar(ctx, "predict", stage_seed);
  side["dt"] = dt;
  side["duration"] = duration;
  side["steps"] = n;
  side["mc_predict"] = cfg.mc_predict;
  side["sample_mode"] = cfg.sample_mode == SampleMode::mean ? "mean" : "sample";

  if (setup.has_truth && get_or(block, "score_against_truth", true)) {
    const int substeps = get_or(block, "substeps", 4);
    const SimResult sim =
        simulate_true(setup.truth, exc.inputs, dt, substeps, VectorXd(), exc.input_dofs);
    const int dofs = setup.truth.dof_count();
    {
      std::vector<std::string> cols{"t"};
      for (int i = 0; i < dofs; ++i) cols.push_back("q" + std::to_string(i));
      for (int i = 0; i < dofs; ++i) cols.push_back("v" + std::to_string(i));
      if (setup.truth.kind() == TrueSystemKind::bouc_wen) cols.push_back("b");
      MatrixXd values(n, 1 + sim.states.cols());
      values.col(0) = time_column(n, dt);
      values.rightCols(sim.states.cols()) = sim.states;
      write_csv(dir / "truth_states.csv", cols, values);
      artifacts.push_back("truth_states.csv");
    }
    MatrixXd pred_mean(n, 2 * dofs), pred_std(n, 2 * dofs);
    for (int k = 0; k < n; ++k)
      for (int i = 0; i < 2 * dofs; ++i) {
        pred_mean(k, i) = result.predicted_states[k].mean(i);
        pred_std(k, i) = std::sqrt(std::max(0.0, result.predicted_states[k].cov(i, i)));
      }
    const MatrixXd truth_x = sim.states.leftCols(2 * dofs);
    const double nmse_disp = nmse_percent(truth_x.leftCols(dofs), pred_mean.leftCols(dofs));
    const double nmse_vel = nmse_percent(truth_x.rightCols(dofs), pred_mean.rightCols(dofs));
    json coverage = json::array();
    double min_cov = 1.0;
    for (int i = 0; i < 2 * dofs; ++i) {
      int inside = 0;
      for (int k = 0; k < n; ++k)
        if (std::abs(truth_x(k, i) - pred_mean(k, i)) <= 2.0 * pred_std(k, i)) ++inside;
      const double frac = static_cast<double>(inside) / n;
      coverage.push_back(frac);
      min_cov = std::min(min_cov, frac);
    }
    json report;
    report["displacement_nmse_percent"] = nmse_disp;
    report["velocity_nmse_percent"] = nmse_vel;
    report["coverage_2sigma"] = coverage;
    report["min_coverage_2sigma"] = min_cov;
    report["steps"] = n;
    write_json(dir / "nmse_report.json", report);
    artifacts.push_back("nmse_report.json");
    side["nmse"] = report;
    ctx.log("predict: NMSE disp " + std::to_string(nmse_disp) + "% vel " +
            std::to_string(nmse_vel) + "%");
  }

  side["seconds"] = now_seconds() - t0;
  add_artifacts(side, dir, artifacts);
  write_json(dir / "predict.json", side);
  ctx.log("predict: -> " + dir.string());
  return side;
}

json run_pipeline(const RunContext& ctx) {
  json manifest;
  manifest["tool_version"] = kToolVersion;
  manifest["config_hash"] = ctx.config_hash;
  manifest["seed"] = ctx.seed;
  json stages = json::object();

  const std::vector<std::pair<std::string, json (*)(const RunContext&)>> plan = {
      {"simulate", &run_simulate_stage},
      {"diagnose", &run_diagnose_stage},
      {"map", &run_map_stage},
      {"predict", &run_predict_stage},
  };
  for (const auto& [name, fn] : plan) {
    const json block = stage_block(ctx.config, name);
    if (block.contains("use")) {
      stages[name] = {{"skipped", true}, {"dir", block.at("use").get<std::string>()}};
      ctx.log(name + ": skipped (using " + block.at("use").get<std::string>() + ")");
      continue;
    }
    const double t0 = now_seconds();
    json side;
    try {
      side = fn(ctx);
    } catch (const std::exception& e) {
      throw StageError(name, "stage '" + name + "' failed: " + e.what());
    }
    stages[name] = {{"skipped", false},
                    {"seconds", now_seconds() - t0},
                    {"dir", (ctx.out_dir / name).string()},
                    {"artifacts", side.value("artifacts", json::object())}};
  }
  manifest["stages"] = stages;
  write_json(ctx.out_dir / "manifest.json", manifest);
  ctx.log("pipeline: manifest -> " + (ctx.out_dir / "manifest.json").string());
  return manifest;
}

json run_scale_bench(const RunContext& ctx) {
  const json block = stage_block(ctx.config, "scale_bench");
  std::vector<int> dofs = get_or(block, "dofs", std::vector<int>{1, 3, 5, 7});
  for (int n : dofs)
    if (n < 1 || n > 10) throw std::runtime_error("scale_bench.dofs must lie in 1..10");
  const int iterations = get_or(block, "iterations", 5);
  const double duration = get_or(block, "duration", 10.0);
  const double dt = get_or(block, "dt", 0.005);
  const uint64_t stage_seed = mix_seed(ctx.seed, 505);

  json rows = json::array();
  std::vector<double> log_n, log_t;
  for (size_t i = 0; iterations > 0 && i < dofs.size(); ++i) {
    const int n = dofs[i];
    TrueSystem truth;
    MdofLocalNlParams p;
    p.masses = VectorXd::Ones(n);
    p.stiffnesses = VectorXd::Constant(n, 100.0);
    p.dampings = VectorXd::Constant(n, 0.2);
    p.k_1g = 1000.0;
    p.c_23 = 0.0;
    truth.params = p;

    SeriesInputs inputs;
    inputs.ground_accel =
        kanai_tajimi(dt, duration, 5.0 * M_PI, 0.6, 0.5, Envelope{}, mix_seed(stage_seed, n));
    inputs.force.resize(inputs.ground_accel.size(), 0);
    const SimResult sim = simulate_true(truth, inputs, dt);

    OutputSpec outputs;
    std::vector<int> lf_dofs;
    for (int i2 = 0; i2 < n; ++i2) {
      outputs.push_back({ChannelKind::acceleration, i2});
      lf_dofs.push_back(i2);
    }
    const MatrixXd clean = clean_outputs(truth, sim, outputs);
    const NoisyMeasurements noisy = add_measurement_noise(clean, 0.05, mix_seed(stage_seed, n));

    const PhysicalParams params = nominal_model(truth, lf_dofs, {});
    const MatrixXd r_cov = noisy.noise_std.array().square().matrix().asDiagonal();
    const ContinuousSSM ssm = build_nominal_ssm(params, outputs, r_cov);

    DiagnosisData data;
    data.inputs = inputs;
    data.measurements = to_measurement_seq(noisy.values);
    data.dt = dt;
    GpHyperparams theta;
    theta.alpha = VectorXd::Ones(n);
    theta.ell = VectorXd::Ones(n);
    const GpPriors priors;

    neg_log_posterior(theta, ssm, data, priors);  // warm-up
    std::vector<double> times;
    for (int it = 0; it < iterations; ++it) {
      const double t0 = now_seconds();
      neg_log_posterior(theta, ssm, data, priors);
      times.push_back(now_seconds() - t0);
    }
    std::sort(times.begin(), times.end());
    const double median = times[times.size() / 2];
    const double mean =
        std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    rows.push_back({{"dofs", n},
                    {"state_dim", 3 * n},
                    {"median_seconds", median},
                    {"mean_seconds", mean},
                    {"iterations", iterations}});
    log_n.push_back(std::log(static_cast<double>(n)));
    log_t.push_back(std::log(median));
    ctx.log("scale-bench: n=" + std::to_string(n) + " median " + std::to_string(median) + " s");
  }

  json report;
  report["tool_version"] = kToolVersion;
  report["config_hash"] = ctx.config_hash;
  report["seed"] = ctx.seed;
  report["rows"] = rows;
  if (log_n.size() >= 2) {
    const double n_pts = static_cast<double>(log_n.size());
    const double sx = std::accumulate(log_n.begin(), log_n.end(), 0.0);
    const double sy = std::accumulate(log_t.begin(), log_t.end(), 0.0);
    double sxx = 0.0, sxy = 0.0;
    for (size_t i = 0; i < log_n.size(); ++i) {
      sxx += log_n[i] * log_n[i];
      sxy += log_n[i] * log_t[i];
    }
    report["loglog_slope"] = (n_pts * sxy - sx * sy) / (n_pts * sxx - sx * sx);
  } else {
    report["loglog_slope"] = nullptr;
  }

  const fs::path dir = ctx.out_dir / "scale_bench";
  {
    MatrixXd values(rows.size(), 4);
    for (size_t i = 0; i < rows.size(); ++i) {
      values(i, 0) = rows[i]["dofs"].get<double>();
      values(i, 1) = rows[i]["state_dim"].get<double>();
      values(i, 2) = rows[i]["median_seconds"].get<double>();
      values(i, 3) = rows[i]["mean_seconds"].get<double>();
    }
    write_csv(dir / "scale_bench.csv", {"dofs", "state_dim", "median_seconds", "mean_seconds"},
              values);
  }
  write_json(dir / "scale_bench.json", report);
  ctx.log("scale-bench: -> " + dir.string());
  return report;
}

}  // namespace gplfm
