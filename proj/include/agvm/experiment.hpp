#pragma once

// Training simulator: draws mini-batches from a synthetic dataset, trains a
// PyramidModel with AGVM+SGD or AGVM+AdamW, and records per-module variance
// traces every tau steps.

#include "agvm/config.hpp"
#include "agvm/dataset.hpp"
#include "agvm/model.hpp"

#include <string>
#include <vector>

namespace agvm {

class WorkerPool;

struct TraceRow {
  Index iter = 0;
  std::string module;
  double phi = 0.0;  // learning rate omitted
  double mu = 1.0;
  double eff_lr = 0.0;
  double loss = 0.0;
  double grad_norm_sq = 0.0;
};

struct RunSummary {
  bool diverged = false;
  Index nan_iteration = -1;
  Index iterations = 0;  // optimizer steps completed
  double final_loss = 0.0;
  std::vector<std::string> modules;
  std::vector<double> phi_mean;        // over trace points
  std::vector<double> abs_log_mu_mean;  // over trace points
  /// Mean over trace points of log(phi_anchor / phi_head), averaged over heads.
  double phi_gap = 0.0;
  /// Mean over trace points t > 0 of max_i / min_i of mu_i^2 phi_i.
  double modulated_phi_ratio = 1.0;
};

struct RunResult {
  double final_loss = 0.0;
  std::vector<TraceRow> trace;
  RunSummary summary;
};

Dataset dataset_for(const ExperimentConfig& config, const PyramidModel& model);

/// Trains for config.total_iterations steps. A non-finite loss or update ends
/// the run early with summary.diverged set.
RunResult run_experiment(const ExperimentConfig& config, WorkerPool& pool);
RunResult run_experiment(const ExperimentConfig& config);

/// Same trace cadence as training, at the initial weights and without updates.
RunResult variance_trace(const ExperimentConfig& config, WorkerPool& pool);

struct ArmResult {
  std::string name;
  ExperimentConfig config;
  RunSummary summary;
};

/// Names of the ablation arms, in run order.
std::vector<std::string> ablation_arms();

/// Runs every arm of the ablation suite from a shared-head pyramid base
/// config, one arm per pool task.
std::vector<ArmResult> ablation_suite(const ExperimentConfig& base, WorkerPool& pool);

/// Summary statistics over a trace (used by run_experiment).
RunSummary summarize(const std::vector<TraceRow>& trace, const ModulePartition& partition);

std::string format_summary(const RunSummary& summary);

/// Writes the trace as CSV. Throws std::runtime_error naming the path on I/O failure.
void emit_csv(const std::vector<TraceRow>& trace, const std::string& path);
std::string csv_text(const std::vector<TraceRow>& trace);

inline constexpr const char* kCsvHeader = "iter,module,phi,mu,eff_lr,loss,grad_norm_sq";

}  // namespace agvm
