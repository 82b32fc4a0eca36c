#pragma once

// Linear-regression benchmark for checking the full-variance estimate against
// brute-force resampling. Two modules: "weight" (W) and "bias" (c), with
// per-sample loss mean((W x + c - y)^2) over the outputs.

#include "agvm/dataset.hpp"
#include "agvm/grad_check.hpp"
#include "agvm/grad_variance.hpp"
#include "agvm/partition.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace agvm {

struct LinearBenchmarkConfig {
  Index n = 512;
  Index batch_size = 32;
  Index resamples = 200;
  Index input_dim = 32;
  Index output_dim = 32;
  double input_mean = 1.0;
  double noise_std = 0.5;
  double weight_init = 0.0;  // every entry of W
  double bias_init = 3.0;    // every entry of c
  std::uint64_t seed = 0;
};

class LinearRegression {
 public:
  LinearRegression(Index input_dim, Index output_dim);

  const ModulePartition& partition() const { return partition_; }

  /// Flat parameters [vec(W) row-major, c] with constant entries.
  Vector<double> constant_parameters(double weight, double bias) const;

  /// Closed-form gradient of mean((W x + c - y)^2) for one sample.
  Vector<double> sample_gradient(const Vector<double>& w, const Dataset& data, Index row) const;

 private:
  Index input_dim_;
  Index output_dim_;
  ModulePartition partition_;
};

struct VarianceComparison {
  std::string module;
  double estimate = 0.0;  // mean plug-in estimate, per parameter
  double oracle = 0.0;    // brute force, per parameter
  double relative_error = 0.0;
};

/// Averages full_variance_estimate over `resamples` mini-batches and compares
/// it with brute_force_variance_oracle at the same weights. Both draw
/// batches without replacement.
std::vector<VarianceComparison> oracle_check(const LinearBenchmarkConfig& config);

struct MlpCheckConfig {
  Index models = 50;
  Index probes = 16;
  Index batch = 4;
  std::uint64_t seed = 0;
};

/// Finite-difference check over random 3-layer relu MLPs with random widths
/// and an MSE loss. Returns the worst report.
ad::GradCheckReport mlp_grad_check(const MlpCheckConfig& config);

}  // namespace agvm
