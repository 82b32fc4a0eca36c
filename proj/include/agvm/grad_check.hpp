#pragma once

// Central finite-difference check of tape gradients.

#include "agvm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace agvm::ad {

template <typename Scalar>
struct BasicParameter {
  Matrix<Scalar> value;
  bool requires_grad = true;
};

/// Builds a scalar loss on `tape` from leaf tensors that mirror the parameters.
template <typename Scalar>
using LossBuilder = std::function<BasicTensor<Scalar>(BasicTape<Scalar>&, std::span<const BasicTensor<Scalar>>)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  Index probed = 0;
  // Probes whose +/- step moves any relu input across or off zero.
  Index skipped_kinks = 0;
};

struct GradCheckOptions {
  Index probe_count = 16;
  double step = 1e-6;
  std::uint64_t seed = 0;
};

namespace detail {

template <typename Scalar>
struct Evaluation {
  Scalar loss;
  std::vector<signed char> kinks;
};

template <typename Scalar>
Evaluation<Scalar> evaluate(const LossBuilder<Scalar>& build, std::span<const BasicParameter<Scalar>> params) {
  BasicTape<Scalar> tape;
  std::vector<BasicTensor<Scalar>> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(tape.leaf(p.value, p.requires_grad));
  const Scalar loss = build(tape, leaves).item();
  if (!std::isfinite(static_cast<double>(loss))) throw std::domain_error("grad_check: loss is not finite");
  return {loss, tape.relu_signature()};
}

}  // namespace detail

/// Compares analytic gradients against central differences at `probe_count`
/// randomly chosen coordinates of the trainable parameters. Returns the max of
/// |analytic - numeric| / max(1, |analytic|) over the probes that were kept.
/// Frozen parameters (requires_grad == false) are never probed.
template <typename Scalar>
GradCheckReport grad_check(const LossBuilder<Scalar>& build, std::vector<BasicParameter<Scalar>> params,
                           const GradCheckOptions& options = {}) {
  if (options.probe_count < 1) throw std::invalid_argument("grad_check: probe_count must be >= 1");

  std::vector<Matrix<Scalar>> analytic(params.size());
  std::vector<signed char> base_kinks;
  {
    BasicTape<Scalar> tape;
    std::vector<BasicTensor<Scalar>> leaves;
    for (const auto& p : params) leaves.push_back(tape.leaf(p.value, p.requires_grad));
    auto loss = build(tape, leaves);
    if (!std::isfinite(static_cast<double>(loss.item()))) throw std::domain_error("grad_check: loss is not finite");
    base_kinks = tape.relu_signature();
    tape.backward(loss);
    for (std::size_t k = 0; k < params.size(); ++k)
      if (params[k].requires_grad) analytic[k] = leaves[k].grad();
  }

  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t k = 0; k < params.size(); ++k)
    if (params[k].requires_grad)
      for (Index e = 0; e < params[k].value.size(); ++e) coords.emplace_back(k, e);

  GradCheckReport report;
  if (coords.empty()) return report;

  std::mt19937_64 rng(options.seed);
  std::uniform_int_distribution<std::size_t> pick(0, coords.size() - 1);
  const Scalar h = static_cast<Scalar>(options.step);

  for (Index probe = 0; probe < options.probe_count; ++probe) {
    const auto [k, e] = coords[pick(rng)];
    Scalar& slot = params[k].value.data()[e];
    const Scalar saved = slot;
    slot = saved + h;
    const auto plus = detail::evaluate(build, std::span<const BasicParameter<Scalar>>(params));
    slot = saved - h;
    const auto minus = detail::evaluate(build, std::span<const BasicParameter<Scalar>>(params));
    slot = saved;

    if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
      ++report.skipped_kinks;
      continue;
    }
    const double numeric = static_cast<double>((plus.loss - minus.loss) / (Scalar(2) * h));
    const double exact = static_cast<double>(analytic[k].data()[e]);
    const double err = std::abs(exact - numeric) / std::max(1.0, std::abs(exact));
    report.max_relative_error = std::max(report.max_relative_error, err);
    ++report.probed;
  }
  return report;
}

using Parameter = BasicParameter<double>;

}  // namespace agvm::ad
