#include "agvm/allocator.hpp"
#include "agvm/benchmark.hpp"
#include "agvm/config.hpp"
#include "agvm/experiment.hpp"
#include "agvm/worker_pool.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

namespace {

struct RunOptions {
  std::string config_path;
  std::string csv_path;
  std::size_t threads = 1;
  bool print_config = false;
};

void add_run_options(CLI::App* cmd, RunOptions& o, bool csv) {
  cmd->add_option("-c,--config", o.config_path, "Experiment config file (key = value lines)");
  if (csv) cmd->add_option("-o,--csv", o.csv_path, "Trace CSV output path")->required();
  cmd->add_option("-j,--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
  cmd->add_flag("--print-config", o.print_config, "Print the resolved config before running");
  cmd->allow_extras();
  cmd->footer("Any config key can be overridden with --key=value, e.g. --lr.base_lr=0.1.");
}

agvm::ExperimentConfig resolve(const RunOptions& o, const CLI::App* cmd) {
  agvm::ExperimentConfig c = o.config_path.empty() ? agvm::ExperimentConfig{} : agvm::load_config(o.config_path);
  agvm::apply_overrides(c, cmd->remaining());
  agvm::apply_seed_env(c);
  agvm::validate(c);
  if (o.print_config) std::cout << agvm::format_config(c) << '\n';
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  agvm::keep_large_allocations_on_heap();
  CLI::App app{"Per-module gradient variance modulation: training simulator and checks"};
  app.require_subcommand(1);

  RunOptions train_opts;
  auto* train = app.add_subcommand("train", "Train one experiment and write its variance trace");
  add_run_options(train, train_opts, true);

  RunOptions ablate_opts;
  auto* ablate = app.add_subcommand("ablate", "Run the ablation arms and print per-arm summaries");
  add_run_options(ablate, ablate_opts, false);

  RunOptions trace_opts;
  auto* trace = app.add_subcommand("variance-trace", "Trace per-module phi at the initial weights, no updates");
  add_run_options(trace, trace_opts, true);

  agvm::MlpCheckConfig mlp;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check on random 3-layer MLPs");
  grad->add_option("--models", mlp.models)->check(CLI::PositiveNumber);
  grad->add_option("--probes", mlp.probes)->check(CLI::PositiveNumber);
  grad->add_option("--seed", mlp.seed);

  agvm::LinearBenchmarkConfig lin;
  auto* oracle = app.add_subcommand("oracle-check", "Full-variance estimate vs brute-force resampling");
  oracle->add_option("--n", lin.n);
  oracle->add_option("--batch-size", lin.batch_size);
  oracle->add_option("--resamples", lin.resamples);
  oracle->add_option("--noise-std", lin.noise_std);
  oracle->add_option("--seed", lin.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      const auto config = resolve(train_opts, train);
      agvm::WorkerPool pool(train_opts.threads);
      const auto result = agvm::run_experiment(config, pool);
      agvm::emit_csv(result.trace, train_opts.csv_path);
      std::cout << agvm::format_summary(result.summary);
      return result.summary.diverged ? 3 : 0;
    }
    if (trace->parsed()) {
      const auto config = resolve(trace_opts, trace);
      agvm::WorkerPool pool(trace_opts.threads);
      const auto result = agvm::variance_trace(config, pool);
      agvm::emit_csv(result.trace, trace_opts.csv_path);
      std::cout << agvm::format_summary(result.summary);
      return 0;
    }
    if (ablate->parsed()) {
      const auto config = resolve(ablate_opts, ablate);
      agvm::WorkerPool pool(ablate_opts.threads);
      for (const auto& arm : agvm::ablation_suite(config, pool)) {
        std::cout << "[" << arm.name << "]\n" << agvm::format_summary(arm.summary);
      }
      return 0;
    }
    if (grad->parsed()) {
      const auto r = agvm::mlp_grad_check(mlp);
      std::printf("max_relative_error=%.17g\nprobed=%lld\nskipped_kinks=%lld\n", r.max_relative_error,
                  static_cast<long long>(r.probed), static_cast<long long>(r.skipped_kinks));
      return 0;
    }
    if (oracle->parsed()) {
      for (const auto& v : agvm::oracle_check(lin))
        std::printf("%s.estimate=%.17g\n%s.oracle=%.17g\n%s.relative_error=%.17g\n", v.module.c_str(), v.estimate,
                    v.module.c_str(), v.oracle, v.module.c_str(), v.relative_error);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
