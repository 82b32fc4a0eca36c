#pragma once

// Split-half gradient variance proxies.
//
// The per-sample gradients of a mini-batch are split into two interleaved
// halves (samples 1, 3, 5, ... and 2, 4, 6, ...). The cosine between the two
// half means measures how much of the mini-batch gradient is shared signal;
// phi = eta^2 (1 - cos) is the per-module variance proxy used to modulate
// learning rates.

#include "agvm/autograd.hpp"
#include "agvm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agvm {

inline constexpr double kCosineNormFloor = 1e-12;

/// dot(a, b) / (|a| |b|); 0 when either norm is below kCosineNormFloor.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size())
    throw std::invalid_argument("cosine_similarity: length mismatch " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na < Scalar(kCosineNormFloor) || nb < Scalar(kCosineNormFloor)) return Scalar(0);
  const Scalar c = a.dot(b) / (na * nb);
  return std::clamp(c, Scalar(-1), Scalar(1));
}

template <typename Scalar>
struct ModuleGroups {
  Vector<Scalar> first;   // mean over samples 1, 3, 5, ... (1-indexed)
  Vector<Scalar> second;  // mean over samples 2, 4, 6, ...
  Vector<Scalar> mean;    // (first + second) / 2
};

template <typename Scalar>
struct BasicGroupedGradients {
  std::vector<ModuleGroups<Scalar>> modules;
  Index batch_size = 0;

  Index size() const { return static_cast<Index>(modules.size()); }
  const ModuleGroups<Scalar>& operator[](Index i) const { return modules.at(static_cast<std::size_t>(i)); }

  /// Full mean gradient laid out as a flat parameter vector.
  Vector<Scalar> flat_mean(const ModulePartition& partition) const {
    Vector<Scalar> g(partition.parameter_count());
    for (Index i = 0; i < partition.size(); ++i) partition.slice(g, i) = (*this)[i].mean;
    return g;
  }
};

/// Interleaved split of per-sample flat gradients into per-module half means.
/// Sums run in sample order, so the result does not depend on how the
/// per-sample gradients were produced.
template <typename Scalar>
BasicGroupedGradients<Scalar> split_groups(std::span<const Vector<Scalar>> per_sample, const ModulePartition& partition) {
  const Index b = static_cast<Index>(per_sample.size());
  if (b < 2 || b % 2 != 0)
    throw std::invalid_argument("split_groups: batch size must be even and >= 2, got " + std::to_string(b) +
                                "; drop or pad one sample");
  const Index d = partition.parameter_count();
  Vector<Scalar> odd = Vector<Scalar>::Zero(d);
  Vector<Scalar> even = Vector<Scalar>::Zero(d);
  for (Index j = 0; j < b; ++j) {
    const auto& r = per_sample[static_cast<std::size_t>(j)];
    if (r.size() != d)
      throw std::invalid_argument("split_groups: sample gradient has " + std::to_string(r.size()) +
                                  " entries, partition covers " + std::to_string(d));
    // j is 0-indexed: j = 0, 2, 4, ... are the 1-indexed odd samples
    if (j % 2 == 0) odd += r;
    else even += r;
  }
  const Scalar inv_half = Scalar(2) / static_cast<Scalar>(b);
  odd *= inv_half;
  even *= inv_half;

  BasicGroupedGradients<Scalar> out;
  out.batch_size = b;
  out.modules.reserve(static_cast<std::size_t>(partition.size()));
  for (Index i = 0; i < partition.size(); ++i) {
    ModuleGroups<Scalar> m;
    m.first = partition.slice(odd, i);
    m.second = partition.slice(even, i);
    m.mean = (m.first + m.second) / Scalar(2);
    out.modules.push_back(std::move(m));
  }
  return out;
}

template <typename Scalar>
struct ModulePhi {
  Scalar phi = 0;
  Scalar cosine = 0;
  Scalar eta = 1;
};

template <typename Scalar>
using BasicPhiEstimate = std::vector<ModulePhi<Scalar>>;

/// phi_i = eta^2 (1 - cos(first_i, second_i)). Pass eta = 1 to omit the learning rate.
template <typename Scalar>
BasicPhiEstimate<Scalar> phi_estimate(const BasicGroupedGradients<Scalar>& groups, Scalar eta) {
  if (!(eta >= Scalar(0))) throw std::invalid_argument("phi_estimate: eta must be non-negative");
  BasicPhiEstimate<Scalar> out;
  out.reserve(groups.modules.size());
  for (const auto& m : groups.modules) {
    ModulePhi<Scalar> p;
    p.cosine = cosine_similarity(m.first, m.second);
    p.eta = eta;
    p.phi = eta * eta * (Scalar(1) - p.cosine);
    out.push_back(p);
  }
  return out;
}

/// Plug-in estimate of Var(eta g_i): ((n - b) / (2n - b)) * phi_i * |g_i|^2.
template <typename Scalar>
std::vector<Scalar> full_variance_estimate(const BasicGroupedGradients<Scalar>& groups, Index n, Scalar eta) {
  const Index b = groups.batch_size;
  if (n < b)
    throw std::invalid_argument("full_variance_estimate: dataset size " + std::to_string(n) + " is below batch size " +
                                std::to_string(b));
  const Scalar factor = static_cast<Scalar>(n - b) / static_cast<Scalar>(2 * n - b);
  const auto phi = phi_estimate(groups, eta);
  std::vector<Scalar> out;
  out.reserve(phi.size());
  for (std::size_t i = 0; i < phi.size(); ++i) out.push_back(factor * phi[i].phi * groups.modules[i].mean.squaredNorm());
  return out;
}

enum class Sampling { WithReplacement, WithoutReplacement };

/// Draws `b` indices from [0, n).
template <typename Rng>
std::vector<Index> draw_batch(Index n, Index b, Sampling sampling, Rng& rng) {
  std::vector<Index> idx(static_cast<std::size_t>(b));
  if (sampling == Sampling::WithReplacement) {
    std::uniform_int_distribution<Index> pick(0, n - 1);
    for (auto& i : idx) i = pick(rng);
    return idx;
  }
  // partial Fisher-Yates
  std::vector<Index> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index k = 0; k < b; ++k) {
    std::uniform_int_distribution<Index> pick(k, n - 1);
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(pick(rng))]);
    idx[static_cast<std::size_t>(k)] = pool[static_cast<std::size_t>(k)];
  }
  return idx;
}

template <typename Scalar>
using PerSampleGradient = std::function<Vector<Scalar>(Index)>;

struct OracleOptions {
  Index batch_size = 32;
  Index resamples = 200;
  std::uint64_t seed = 0;
  Sampling sampling = Sampling::WithReplacement;
};

/// Brute-force E|g - grad f(w)|^2 per module, divided by the module's
/// parameter count. grad f(w) is the exact mean over all n samples; the
/// expectation is the empirical mean over `resamples` random mini-batches.
template <typename Scalar>
std::vector<Scalar> brute_force_variance_oracle(const PerSampleGradient<Scalar>& gradient_of, Index n,
                                                const ModulePartition& partition, const OracleOptions& options) {
  if (options.batch_size < 1 || options.batch_size > n)
    throw std::invalid_argument("brute_force_variance_oracle: batch size must lie in [1, n]");
  if (options.resamples < 100) throw std::invalid_argument("brute_force_variance_oracle: resamples must be >= 100");

  std::vector<Vector<Scalar>> all;
  all.reserve(static_cast<std::size_t>(n));
  Vector<Scalar> full = Vector<Scalar>::Zero(partition.parameter_count());
  for (Index j = 0; j < n; ++j) {
    all.push_back(gradient_of(j));
    full += all.back();
  }
  full /= static_cast<Scalar>(n);

  std::mt19937_64 rng(options.seed);
  std::vector<Scalar> acc(static_cast<std::size_t>(partition.size()), Scalar(0));
  Vector<Scalar> g(partition.parameter_count());
  for (Index r = 0; r < options.resamples; ++r) {
    const auto idx = draw_batch(n, options.batch_size, options.sampling, rng);
    g.setZero();
    for (Index j : idx) g += all[static_cast<std::size_t>(j)];
    g /= static_cast<Scalar>(options.batch_size);
    for (Index i = 0; i < partition.size(); ++i)
      acc[static_cast<std::size_t>(i)] += (partition.slice(g, i) - partition.slice(full, i)).squaredNorm();
  }
  for (Index i = 0; i < partition.size(); ++i)
    acc[static_cast<std::size_t>(i)] /=
        static_cast<Scalar>(options.resamples) * static_cast<Scalar>(partition[i].size);
  return acc;
}

using GroupedGradients = BasicGroupedGradients<double>;
using PhiEstimate = BasicPhiEstimate<double>;

}  // namespace agvm
