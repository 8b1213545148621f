// Command-line front end. Exit codes: 0 success, 1 check failure,
// 2 invalid config or usage, 3 reward starvation.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "rlvr/rlvr.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInvalidConfig = 2;
constexpr int kStarvation = 3;

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw rlvr::ValidationError("cannot read config file " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run(rlvr::ExperimentKind kind, const rlvr::RunContext& ctx, const rlvr::ExperimentConfig& config) {
  using rlvr::ExperimentKind;
  switch (kind) {
    case ExperimentKind::simulate: rlvr::run_simulate(config, ctx); break;
    case ExperimentKind::sweep_length: rlvr::run_sweep_length(config, ctx); break;
    case ExperimentKind::sweep_p0: rlvr::run_sweep_p0(config, ctx); break;
    case ExperimentKind::plan: rlvr::run_plan(config, ctx); break;
    case ExperimentKind::mean_field: rlvr::run_mean_field(config, ctx); break;
    case ExperimentKind::verify:
      return rlvr::run_verify(config, ctx).all_passed() ? kOk : kCheckFailed;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Positive-sample REINFORCE simulator for autoregressive task compositions"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  app.add_option("--config", config_path, "JSON experiment config (defaults apply when omitted)");
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "master seed, overrides the config");
  app.add_option("--threads", threads, "worker threads (0 = all cores); never changes results")
      ->capture_default_str();

  const std::pair<const char*, const char*> commands[] = {
      {"simulate", "train once per replicate and record per-iteration metrics"},
      {"sweep-length", "iterations to reach the target accuracy as a function of CoT length"},
      {"sweep-p0", "trap problem: final accuracy as a function of the initial correct-task probability"},
      {"verify", "run the theory-check suite"},
      {"plan", "hyperparameters from the convergence theorem"},
      {"mean-field", "infinite-batch dynamics of the trap problem"}};
  for (const auto& [name, help] : commands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInvalidConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  const rlvr::ExperimentKind kind = *rlvr::parse_kind(name);
  try {
    rlvr::ExperimentConfig config =
        config_path.empty() ? rlvr::default_config(kind)
                            : rlvr::parse_config_text(read_text(config_path), kind);
    if (*seed_opt) config.seed = seed;
    rlvr::RunContext ctx;
    ctx.out_dir = out_dir;
    ctx.threads = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
    ctx.log = &std::cout;
    const int code = run(kind, ctx, config);
    std::cout << "outputs in " << out_dir << "\n";
    return code;
  } catch (const rlvr::RewardStarvation& e) {
    std::cerr << "reward starvation: " << e.what() << "\n";
    return kStarvation;
  } catch (const rlvr::ValidationError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const rlvr::CapacityError& e) {
    std::cerr << "invalid config: " << e.what() << "\n";
    return kInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kCheckFailed;
  }
}
