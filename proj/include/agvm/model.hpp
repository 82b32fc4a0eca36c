#pragma once

// Synthetic multi-module regressors: a trunk MLP, a feature pyramid with N
// levels, and a head that is either shared by all levels or owned per level.
//
// The trunk emits `positions` feature vectors of width `channels` per sample.
// Level l averages neighbouring positions l times (positions >> l remain),
// optionally passes them through a per-level lateral layer (the pyramid
// module) and feeds every position to the head. A shared head therefore runs
// K * sum_l (positions >> l) times per sample, while the trunk runs once.

#include "agvm/autograd.hpp"
#include "agvm/partition.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace agvm {

enum class HeadMode { Shared, Independent };

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& text);

struct ModelConfig {
  Index input_dim = 8;
  std::vector<Index> trunk_widths{32};
  Index levels = 4;
  Index positions = 8;
  Index channels = 4;
  Index head_width = 16;
  Index output_dim = 1;  // per position
  HeadMode head_mode = HeadMode::Shared;
  bool pyramid = true;
  double mask_fraction = 0.0;
  Index proposals = 1;
  double proposal_noise = 0.1;
};

/// Throws std::invalid_argument naming the first violated constraint.
void validate(const ModelConfig& config);

/// Loss terms kept per sample under masking: max(1, floor((1 - p) * terms)).
Index kept_terms(Index terms, double mask_fraction);

class PyramidModel {
 public:
  PyramidModel(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const ModulePartition& partition() const { return partition_; }
  const Vector<double>& parameters() const { return params_; }
  Vector<double>& parameters() { return params_; }

  Index active_levels() const { return config_.pyramid ? config_.levels : 1; }
  /// Target columns per sample (the dataset output width).
  Index target_width() const;
  /// Prediction elements per sample, counting proposal replicas.
  Index loss_terms_per_sample() const { return config_.proposals * target_width(); }
  Index kept_per_sample(double mask_fraction) const { return kept_terms(loss_terms_per_sample(), mask_fraction); }

  /// One leaf per parameter block, holding the matching slice of `weights`.
  std::vector<ad::Tensor> bind(ad::Tape& tape, const Vector<double>& weights, bool requires_grad = true) const;

  /// Mean squared error over the kept outputs of a batch. Masks and proposal
  /// noise for row j are drawn from (mask_seed, sample_keys[j]) so one sample
  /// sees the same randomness whether evaluated alone or inside a batch.
  ad::Tensor forward_loss(ad::Tape& tape, std::span<const ad::Tensor> leaves, const Matrix<double>& inputs,
                          const Matrix<double>& targets, double mask_fraction, std::uint64_t mask_seed,
                          std::span<const std::uint64_t> sample_keys) const;

  struct Evaluation {
    double loss = 0.0;
    Vector<double> gradient;
  };

  /// Loss and flat gradient at `weights` for the given rows.
  Evaluation evaluate(const Vector<double>& weights, const Matrix<double>& inputs, const Matrix<double>& targets,
                      std::uint64_t mask_seed, std::span<const std::uint64_t> sample_keys) const;

 private:
  ModelConfig config_;
  ModulePartition partition_;
  Vector<double> params_;
  std::vector<Matrix<double>> pool_;  // per level, (P*C) x (P_l*C)
  Index trunk_layers_ = 0;
};

inline PyramidModel build_model(const ModelConfig& config, std::uint64_t seed) { return PyramidModel(config, seed); }

}  // namespace agvm
