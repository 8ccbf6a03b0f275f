#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <gplfm/pipeline.hpp>
#include <gplfm/rng.hpp>

#include <fstream>

using namespace gplfm;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("gplfm_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunContext make_ctx(const json& config, const fs::path& out, uint64_t seed) {
  RunContext ctx;
  ctx.config = config;
  ctx.out_dir = out;
  ctx.seed = seed;
  ctx.quiet = true;
  ctx.config_hash = config_hash(config);
  return ctx;
}

json tiny_pipeline_config() {
  json config;
  config["system"] = {{"kind", "sdof_duffing"},
                      {"m", 1.0},
                      {"k", 100.0},
                      {"c", 0.2},
                      {"k_nl", 1000.0},
                      {"measurements", json::array({"acc:0"})},
                      {"noise_fraction", 0.05}};
  config["simulate"] = {{"dt", 0.01},
                        {"duration", 4.0},
                        {"excitation", {{"kind", "kanai_tajimi"}, {"role", "ground"},
                                        {"intensity", 0.5},
                                        {"envelope", {{"t_rise", 1.0}, {"t_hold", 3.0}}}}}};
  config["diagnose"] = {{"restarts", 1}, {"max_evals", 80}};
  config["map"] = {{"samples_per_step", 2},
                   {"hidden", json::array({8})},
                   {"max_epochs", 40},
                   {"batch_size", 128}};
  config["predict"] = {{"dt", 0.01},
                       {"duration", 2.0},
                       {"excitation", {{"kind", "sine"}, {"role", "force"}, {"dof", 0},
                                       {"amplitude", 2.0}, {"freq_hz", 1.0}}},
                       {"restarts", 1},
                       {"max_evals", 40},
                       {"mc_predict", 16}};
  return config;
}

}  // namespace

TEST_CASE("csv: round trip with NaN and comments") {
  const fs::path dir = fresh_dir("csv");
  MatrixXd values(3, 2);
  values << 1.0, 2.5, std::nan(""), -4.0, 1e-17, 3.0;
  write_csv(dir / "a.csv", {"x", "y"}, values);

  const CsvTable back = read_csv(dir / "a.csv");
  REQUIRE(back.columns == std::vector<std::string>{"x", "y"});
  REQUIRE(back.values.rows() == 3);
  CHECK(back.values(0, 0) == 1.0);
  CHECK(back.values(0, 1) == 2.5);
  CHECK(std::isnan(back.values(1, 0)));
  CHECK(back.values(1, 1) == -4.0);
  CHECK(back.values(2, 0) == 1e-17);  // full precision round trip

  std::ofstream manual(dir / "b.csv");
  manual << "# a comment line\nu,w\n1,2\n# another\n3,\n";
  manual.close();
  const CsvTable b = read_csv(dir / "b.csv");
  CHECK(b.values.rows() == 2);
  CHECK(b.values(1, 0) == 3.0);
  CHECK(std::isnan(b.values(1, 1)));

  CHECK_THROWS(read_csv(dir / "missing.csv"));
}

TEST_CASE("io series: dt header survives the round trip") {
  const fs::path dir = fresh_dir("ioseries");
  IoSeries series;
  series.dt = 1.0 / 610.35;
  series.input = VectorXd::LinSpaced(100, 0.0, 1.0);
  series.output = series.input.array().sin();
  save_io_csv(dir / "io.csv", series);
  const IoSeries back = load_io_csv(dir / "io.csv");
  CHECK(back.dt == series.dt);
  CHECK((back.input - series.input).norm() == 0.0);
  CHECK((back.output - series.output).norm() == 0.0);
}

TEST_CASE("json: hyperparameter and model round trips are exact") {
  GpHyperparams theta;
  theta.alpha = VectorXd(2);
  theta.alpha << 0.123456789012345, 17.25;
  theta.ell = VectorXd(2);
  theta.ell << 2e-7, 3.0;
  const GpHyperparams theta2 = hyperparams_from_json(to_json(theta));
  CHECK((theta2.alpha - theta.alpha).norm() == 0.0);
  CHECK((theta2.ell - theta.ell).norm() == 0.0);

  BnnTopology t;
  t.input_dim = 2;
  t.hidden = {4, 3};
  t.target_dim = 1;
  t.activation = Activation::tanh_act;
  TrainConfig cfg;
  cfg.seed = 5;
  BnnModel model;
  model.topology = t;
  model.vp = init_variational(t, cfg);
  model.normalization.shift = VectorXd::Constant(2, 0.25);
  model.normalization.scale = VectorXd::Constant(2, 1.75);

  const BnnModel back = bnn_model_from_json(to_json(model));
  CHECK(back.topology.input_dim == 2);
  CHECK(back.topology.hidden == std::vector<int>{4, 3});
  CHECK(back.topology.activation == Activation::tanh_act);
  CHECK((back.vp.mu_q - model.vp.mu_q).norm() == 0.0);
  CHECK((back.vp.rho_q - model.vp.rho_q).norm() == 0.0);
  CHECK((back.normalization.shift - model.normalization.shift).norm() == 0.0);

  const VectorXd x = VectorXd::Constant(2, 0.4);
  const MatrixXd ens = sample_weights(model.vp, 4, 9);
  const PredictiveGaussian a = ensemble_predictive(model, ens, x);
  const PredictiveGaussian b = ensemble_predictive(back, ens, x);
  CHECK((a.mean - b.mean).norm() == 0.0);
  CHECK((a.cov - b.cov).norm() == 0.0);
}

TEST_CASE("config hash: canonical and content sensitive") {
  json a, b;
  a["x"] = 1;
  a["y"] = "s";
  b["y"] = "s";
  b["x"] = 1;
  CHECK(config_hash(a) == config_hash(b));  // nlohmann orders keys
  b["x"] = 2;
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("parse_channel and parse_system") {
  CHECK(parse_channel("acc:0").kind == ChannelKind::acceleration);
  CHECK(parse_channel("disp:2").dof == 2);
  CHECK(parse_channel("vel:1").kind == ChannelKind::velocity);
  CHECK_THROWS(parse_channel("acc"));
  CHECK_THROWS(parse_channel("wat:0"));

  json sys = {{"kind", "sdof_duffing"}, {"measurements", json::array({"acc:0"})}};
  const SystemSetup sdof = parse_system(sys);
  CHECK(sdof.has_truth);
  CHECK(sdof.lf_dofs == std::vector<int>{0});
  CHECK(sdof.nominal.stiffness(0, 0) == doctest::Approx(100.0));
  CHECK(sdof.outputs.size() == 1);
  CHECK(sdof.noise_fraction == doctest::Approx(0.05));

  json mdof = {{"kind", "mdof_local_nl"},
               {"masses", json::array({1.0, 1.0, 1.0})},
               {"stiffnesses", json::array({100.0, 100.0, 100.0})},
               {"dampings", json::array({0.2, 0.2, 0.2})},
               {"measurements", json::array({"acc:0", "acc:1", "acc:2"})}};
  const SystemSetup chain = parse_system(mdof);
  CHECK(chain.lf_dofs == std::vector<int>{0, 1, 2});
  CHECK(chain.nominal.stiffness(0, 0) == doctest::Approx(200.0));
  CHECK(chain.nominal.lf_influence.isIdentity(1e-12));

  json custom = {{"kind", "custom"},
                 {"mass", json::array({json::array({2.0})})},
                 {"damping", json::array({json::array({0.1})})},
                 {"stiffness", json::array({json::array({50.0})})},
                 {"measurements", json::array({"disp:0"})}};
  const SystemSetup cs = parse_system(custom);
  CHECK(!cs.has_truth);
  CHECK(cs.nominal.mass(0, 0) == doctest::Approx(2.0));

  json bad = {{"kind", "nope"}};
  CHECK_THROWS(parse_system(bad));
}

TEST_CASE("pipeline: tiny end-to-end run emits every artifact and reproduces bitwise") {
  const json config = tiny_pipeline_config();
  const fs::path out1 = fresh_dir("pipe1");
  const json manifest = run_pipeline(make_ctx(config, out1, 7));

  const std::vector<std::string> artifacts = {
      "simulate/excitation.csv",    "simulate/truth_states.csv",
      "simulate/mfe_true.csv",      "simulate/measurements.csv",
      "simulate/measurements_clean.csv", "simulate/simulate.json",
      "diagnose/smoothed.csv",      "diagnose/smoothed_cov.csv",
      "diagnose/objective_trace.csv", "diagnose/theta_map.json",
      "diagnose/diagnose.json",     "map/bnn_model.json",
      "map/train_trace.csv",        "map/map_samples.csv",
      "map/map.json",               "predict/predicted.csv",
      "predict/excitation.csv",     "predict/pseudo_measurements.csv",
      "predict/theta_star.json",    "predict/truth_states.csv",
      "predict/nmse_report.json",   "predict/predict.json",
      "manifest.json"};
  for (const auto& rel : artifacts) {
    INFO("missing artifact: " << rel);
    CHECK(fs::exists(out1 / rel));
  }
  CHECK(manifest.at("stages").at("predict").at("skipped").get<bool>() == false);
  CHECK(manifest.at("config_hash").get<std::string>() == config_hash(config));

  const json report = read_json(out1 / "predict" / "nmse_report.json");
  CHECK(report.contains("displacement_nmse_percent"));
  CHECK(report.contains("velocity_nmse_percent"));
  CHECK(report.contains("min_coverage_2sigma"));
  CHECK(std::isfinite(report["displacement_nmse_percent"].get<double>()));

  // every sidecar records the provenance tuple
  for (const auto& stage : {"simulate", "diagnose", "map", "predict"}) {
    const json side = read_json(out1 / stage / (std::string(stage) + ".json"));
    CHECK(side.at("seed").get<uint64_t>() == 7);
    CHECK(side.at("config_hash").get<std::string>() == config_hash(config));
    CHECK(side.at("tool_version").get<std::string>() == kToolVersion);
    CHECK(side.contains("stage_seed"));
  }

  // identical config + seed: byte-identical data artifacts
  const fs::path out2 = fresh_dir("pipe2");
  run_pipeline(make_ctx(config, out2, 7));
  for (const auto& rel : artifacts) {
    if (rel.find(".json") != std::string::npos && rel.find("theta") == std::string::npos &&
        rel.find("bnn_model") == std::string::npos && rel.find("nmse") == std::string::npos)
      continue;  // sidecars embed wall-clock seconds
    INFO("artifact differs: " << rel);
    CHECK(file_hash(out1 / rel) == file_hash(out2 / rel));
  }

  // a different seed must actually change the data
  const fs::path out3 = fresh_dir("pipe3");
  run_pipeline(make_ctx(config, out3, 8));
  CHECK(file_hash(out1 / "simulate/measurements.csv") !=
        file_hash(out3 / "simulate/measurements.csv"));
}

TEST_CASE("pipeline: stages can be skipped by pointing at existing artifacts") {
  const json config = tiny_pipeline_config();
  const fs::path base = fresh_dir("pipe_base");
  run_pipeline(make_ctx(config, base, 7));

  json partial = config;
  partial["simulate"] = {{"use", (base / "simulate").string()}};
  partial["diagnose"] = {{"use", (base / "diagnose").string()}};
  partial["map"] = {{"use", (base / "map").string()}};

  const fs::path out = fresh_dir("pipe_partial");
  const json manifest = run_pipeline(make_ctx(partial, out, 7));
  CHECK(manifest.at("stages").at("simulate").at("skipped").get<bool>() == true);
  CHECK(manifest.at("stages").at("map").at("skipped").get<bool>() == true);
  CHECK(manifest.at("stages").at("predict").at("skipped").get<bool>() == false);
  CHECK(fs::exists(out / "predict" / "predicted.csv"));
  CHECK(!fs::exists(out / "simulate"));
}

TEST_CASE("pipeline: stage failures carry the stage name") {
  json config = tiny_pipeline_config();
  config["system"]["kind"] = "custom";
  config["system"]["mass"] = json::array({json::array({1.0})});
  config["system"]["damping"] = json::array({json::array({0.1})});
  config["system"]["stiffness"] = json::array({json::array({100.0})});
  const fs::path out = fresh_dir("pipe_fail");
  try {
    run_pipeline(make_ctx(config, out, 7));
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage == "simulate");
  }
}

TEST_CASE("scale bench: zero iterations yields an empty report") {
  json config;
  config["scale_bench"] = {{"dofs", json::array({1, 2})}, {"iterations", 0}};
  const fs::path out = fresh_dir("bench0");
  const json report = run_scale_bench(make_ctx(config, out, 1));
  CHECK(report.at("rows").empty());
  CHECK(report.at("loglog_slope").is_null());
  CHECK(fs::exists(out / "scale_bench" / "scale_bench.json"));
  CHECK(fs::exists(out / "scale_bench" / "scale_bench.csv"));
}

TEST_CASE("scale bench: tiny sweep produces timings") {
  json config;
  config["scale_bench"] = {{"dofs", json::array({1, 2})},
                           {"iterations", 2},
                           {"duration", 2.0},
                           {"dt", 0.01}};
  const fs::path out = fresh_dir("bench1");
  const json report = run_scale_bench(make_ctx(config, out, 1));
  REQUIRE(report.at("rows").size() == 2);
  for (const auto& row : report.at("rows")) {
    CHECK(row.at("median_seconds").get<double>() > 0.0);
    CHECK(row.at("iterations").get<int>() == 2);
  }
  CHECK(report.at("loglog_slope").is_number());

  json bad;
  bad["scale_bench"] = {{"dofs", json::array({0})}};
  CHECK_THROWS(run_scale_bench(make_ctx(bad, out, 1)));
}
