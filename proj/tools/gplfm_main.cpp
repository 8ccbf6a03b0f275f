#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gplfm/pipeline.hpp"

namespace {

using gplfm::ExitCode;
using gplfm::RunContext;

struct CommonOpts {
  std::string config_path;
  std::string out_dir = "out";
  uint64_t seed = 0;
  bool seed_given = false;
  bool quiet = false;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool config_required) {
  auto* c = cmd->add_option("--config", opts.config_path, "JSON run configuration");
  if (config_required) c->required();
  cmd->add_option("--out", opts.out_dir, "output directory");
  cmd->add_option("--seed", opts.seed, "global RNG seed (overrides config)")
      ->each([&opts](const std::string&) { opts.seed_given = true; });
  cmd->add_flag("--quiet", opts.quiet, "suppress progress output");
}

RunContext make_context(const CommonOpts& opts) {
  RunContext ctx;
  if (!opts.config_path.empty()) ctx.config = gplfm::read_json(opts.config_path);
  if (!ctx.config.is_object()) ctx.config = gplfm::json::object();
  ctx.seed = opts.seed_given ? opts.seed : ctx.config.value("seed", 0ull);
  ctx.out_dir = !opts.out_dir.empty() ? opts.out_dir
                                      : ctx.config.value("out_dir", std::string("out"));
  ctx.quiet = opts.quiet;
  ctx.config_hash = gplfm::config_hash(ctx.config);
  return ctx;
}

int run_stage(const CommonOpts& opts, ExitCode failure_code,
              gplfm::json (*fn)(const RunContext&)) {
  RunContext ctx;
  try {
    ctx = make_context(opts);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config_error);
  }
  try {
    fn(ctx);
    return static_cast<int>(ExitCode::ok);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(failure_code);
  }
}

int run_full_pipeline(const CommonOpts& opts) {
  RunContext ctx;
  try {
    ctx = make_context(opts);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config_error);
  }
  try {
    gplfm::run_pipeline(ctx);
    return static_cast<int>(ExitCode::ok);
  } catch (const gplfm::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.stage == "simulate") return static_cast<int>(ExitCode::simulate_failed);
    if (e.stage == "diagnose") return static_cast<int>(ExitCode::diagnose_failed);
    if (e.stage == "map") return static_cast<int>(ExitCode::map_failed);
    return static_cast<int>(ExitCode::predict_failed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ExitCode::config_error);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Probabilistic digital-twin pipeline for misspecified structural models"};
  app.require_subcommand(1);

  CommonOpts opts;
  auto* sim = app.add_subcommand("simulate", "generate truth, excitation, and measurements");
  add_common(sim, opts, true);
  auto* diag = app.add_subcommand("diagnose", "estimate states and latent forces from data");
  add_common(diag, opts, true);
  auto* map_cmd = app.add_subcommand("map", "train the state-to-error BNN on smoothed samples");
  add_common(map_cmd, opts, true);
  auto* pred = app.add_subcommand("predict", "measurement-free prognosis under new excitation");
  add_common(pred, opts, true);
  auto* pipe = app.add_subcommand("pipeline", "run simulate, diagnose, map, predict in order");
  add_common(pipe, opts, true);
  auto* bench = app.add_subcommand("scale-bench", "time diagnosis objective cost vs DOF count");
  add_common(bench, opts, false);

  CLI11_PARSE(app, argc, argv);

  if (sim->parsed()) return run_stage(opts, ExitCode::simulate_failed, &gplfm::run_simulate_stage);
  if (diag->parsed()) return run_stage(opts, ExitCode::diagnose_failed, &gplfm::run_diagnose_stage);
  if (map_cmd->parsed()) return run_stage(opts, ExitCode::map_failed, &gplfm::run_map_stage);
  if (pred->parsed()) return run_stage(opts, ExitCode::predict_failed, &gplfm::run_predict_stage);
  if (pipe->parsed()) return run_full_pipeline(opts);
  if (bench->parsed())
    return run_stage(opts, ExitCode::scale_bench_failed, &gplfm::run_scale_bench);
  return static_cast<int>(ExitCode::config_error);
}
