#include "agvm/dataset.hpp"

#include "agvm/seeding.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace agvm {

Dataset make_dataset(const DatasetConfig& c) {
  if (c.n < 2) throw std::invalid_argument("make_dataset: n must be at least 2");
  if (c.input_dim < 1 || c.output_dim < 1) throw std::invalid_argument("make_dataset: dimensions must be positive");
  if (!(c.noise_std >= 0.0)) throw std::invalid_argument("make_dataset: noise_std must be non-negative");

  Dataset d;
  std::normal_distribution<double> unit(0.0, 1.0);

  std::mt19937_64 map_rng(derive_seed(c.seed, {11}));
  d.map.resize(c.output_dim, c.input_dim);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(c.input_dim));
  for (Index k = 0; k < d.map.size(); ++k) d.map.data()[k] = map_scale * unit(map_rng);

  std::mt19937_64 input_rng(derive_seed(c.seed, {12}));
  d.inputs.resize(c.n, c.input_dim);
  for (Index k = 0; k < d.inputs.size(); ++k) d.inputs.data()[k] = c.input_mean + unit(input_rng);

  d.targets.noalias() = d.inputs * d.map.transpose();
  if (c.noise_std > 0.0) {
    std::mt19937_64 noise_rng(derive_seed(c.seed, {13}));
    for (Index k = 0; k < d.targets.size(); ++k) d.targets.data()[k] += c.noise_std * unit(noise_rng);
  }
  return d;
}

}  // namespace agvm
