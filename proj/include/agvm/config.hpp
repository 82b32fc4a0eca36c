#pragma once

// Experiment configuration: a flat `key = value` text format whose keys
// mirror the ExperimentConfig fields ("model.levels", "lr.base_lr", ...).

#include "agvm/model.hpp"
#include "agvm/optimizer.hpp"
#include "agvm/schedule.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace agvm {

struct DatasetSpec {
  Index n = 2048;
  double noise_std = 0.1;
  double input_mean = 0.0;
  std::optional<std::uint64_t> seed;  // derived from the experiment seed when unset
};

enum class OptimizerKind { Sgd, AdamW };

struct OptimizerSpec {
  OptimizerKind kind = OptimizerKind::Sgd;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

struct LrSpec {
  double base_lr = 0.04;
  Index base_batch = 32;
  Index warmup_iters = 0;
  LrScaling scaling = LrScaling::LinearThenSqrt;
  LrDecay decay = LrDecay::Multistep;
  std::vector<Index> milestones;
  double factor = 0.1;
  double power = 1.0;
};

struct AgvmSpec {
  bool enabled = true;
  Index tau = 0;  // 0 picks 10, or 5 for batches above 1024
  double alpha = 0.97;
  double clip_lo = 0.1;
  double clip_hi = 10.0;
  double eps_ratio = 1e-12;
};

enum class AblationKind { None, IndependentHeads, NoPyramid, Mask, Proposals };

struct Ablation {
  AblationKind kind = AblationKind::None;
  double mask_fraction = 0.75;
  Index proposals = 1;
};

/// "none", "independent_heads", "no_pyramid", "mask(0.75)", "proposals(8)".
Ablation parse_ablation(const std::string& text);
std::string to_string(const Ablation& ablation);

struct ExperimentConfig {
  ModelConfig model;
  DatasetSpec dataset;
  OptimizerSpec optimizer;
  Index batch_size = 256;
  Index total_iterations = 2000;
  LrSpec lr;
  AgvmSpec agvm;
  Ablation ablation;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument naming the violated constraint.
void validate(const ExperimentConfig& config);

/// Model config with the ablation folded in.
ModelConfig effective_model(const ExperimentConfig& config);
LrSchedule schedule_of(const ExperimentConfig& config);
ModulatorConfig modulator_of(const ExperimentConfig& config);
std::uint64_t dataset_seed(const ExperimentConfig& config);

/// Sets one key. Unknown keys and malformed values throw std::invalid_argument.
void set_key(ExperimentConfig& config, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

/// Parses `key = value` lines; `#` starts a comment. Starts from `base`.
ExperimentConfig parse_config(std::istream& in, ExperimentConfig base = {});
ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {});

/// Applies `--key=value` arguments; anything else is an error.
void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& args);

/// Replaces the seed with $AGVM_SEED when that variable is set.
void apply_seed_env(ExperimentConfig& config);

/// Every key with its current value, in config_keys() order, one per line.
std::string format_config(const ExperimentConfig& config);

}  // namespace agvm
