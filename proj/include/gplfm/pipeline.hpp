#pragma once

#include <filesystem>

#include "gplfm/benchmarks.hpp"
#include "gplfm/diagnosis.hpp"
#include "gplfm/io.hpp"
#include "gplfm/prognosis.hpp"

namespace gplfm {

inline constexpr const char* kToolVersion = "0.1.0";

// Distinct exit codes per failure class, used by the CLI.
enum class ExitCode : int {
  ok = 0,
  config_error = 2,
  simulate_failed = 10,
  diagnose_failed = 11,
  map_failed = 12,
  predict_failed = 13,
  scale_bench_failed = 14,
};

struct RunContext {
  json config;
  std::filesystem::path out_dir;
  uint64_t seed = 0;
  bool quiet = false;
  std::string config_hash;  // FNV-1a of the canonical config dump

  void log(const std::string& line) const;
};

std::string config_hash(const json& config);

// Raised by run_pipeline so the CLI can map the failing stage to an exit code.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error(what), stage(std::move(stage_name)) {}
};

// Parsed "system" block: the true benchmark system (when available for
// simulation/scoring) plus the nominal linear model and measurement setup.
struct SystemSetup {
  bool has_truth = false;
  TrueSystem truth;
  PhysicalParams nominal;
  OutputSpec outputs;
  std::vector<int> lf_dofs;
  std::vector<int> input_dofs;  // DOFs receiving known forces
  double noise_fraction = 0.05;
};

SystemSetup parse_system(const json& system_config);
OutputChannel parse_channel(const std::string& text);

// Stage entry points; each reads/writes artifacts under ctx.out_dir/<stage>
// (or a directory given by the stage's "use" key) and returns its sidecar.
json run_simulate_stage(const RunContext& ctx);
json run_diagnose_stage(const RunContext& ctx);
json run_map_stage(const RunContext& ctx);
json run_predict_stage(const RunContext& ctx);

// simulate -> diagnose -> map -> predict, skipping stages whose artifacts are
// supplied via "use"; writes manifest.json and returns it.
json run_pipeline(const RunContext& ctx);

// Appendix-style scaling harness over shear chains with a ground Duffing
// spring; times diagnosis objective evaluations per DOF count.
json run_scale_bench(const RunContext& ctx);

// Directory a stage reads its inputs from: the producing stage's "use"
// override when present, else ctx.out_dir / stage name.
std::filesystem::path stage_dir(const RunContext& ctx, const std::string& stage);

}  // namespace gplfm
