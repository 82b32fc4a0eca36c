#pragma once

#include "agvm/autograd.hpp"

#include <cstdint>

namespace agvm {

struct DatasetConfig {
  Index n = 2048;
  Index input_dim = 8;
  Index output_dim = 1;
  double noise_std = 0.1;
  double input_mean = 0.0;
  std::uint64_t seed = 0;
};

/// targets = inputs * map^T + N(0, noise_std^2), inputs ~ N(input_mean, 1).
struct Dataset {
  Matrix<double> inputs;   // n x input_dim
  Matrix<double> targets;  // n x output_dim
  Matrix<double> map;      // output_dim x input_dim, entries N(0, 1 / input_dim)

  Index size() const { return inputs.rows(); }
};

Dataset make_dataset(const DatasetConfig& config);

}  // namespace agvm
