#pragma once

// Learning-rate schedules: batch-size scaling of a base rate, linear warmup,
// then multistep or polynomial decay.

#include "agvm/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace agvm {

enum class LrScaling { Linear, LinearThenSqrt };
enum class LrDecay { Multistep, Poly };

struct LrSchedule {
  double base_lr = 0.04;
  Index base_batch = 32;
  Index warmup_iters = 0;
  LrScaling scaling = LrScaling::LinearThenSqrt;
  LrDecay decay = LrDecay::Multistep;
  std::vector<Index> milestones{};  // steps at which the rate is multiplied by `factor`
  double factor = 0.1;
  double power = 1.0;
  Index total_iterations = 1;
};

/// Batch size above which linear-then-sqrt scaling switches to square root.
inline constexpr Index kSqrtScalingPivot = 128;

inline void validate(const LrSchedule& s) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid lr schedule: " + what); };
  if (!(s.base_lr >= 0.0)) fail("base_lr must be non-negative");
  if (s.base_batch < 1) fail("base_batch must be positive");
  if (s.warmup_iters < 0) fail("warmup_iters must be non-negative");
  if (s.total_iterations < 0) fail("total_iterations must be non-negative");
  if (s.warmup_iters > 0 && s.warmup_iters >= s.total_iterations) fail("warmup_iters must be below total_iterations");
  if (!std::is_sorted(s.milestones.begin(), s.milestones.end())) fail("milestones must be ascending");
  if (!(s.factor > 0.0 && s.factor <= 1.0)) fail("factor must lie in (0, 1]");
  if (!(s.power >= 0.0)) fail("power must be non-negative");
}

inline double peak_lr(const LrSchedule& s, Index batch) {
  if (batch < 1) throw std::invalid_argument("peak_lr: batch size must be positive");
  const double b = static_cast<double>(batch);
  const double base = static_cast<double>(s.base_batch);
  if (s.scaling == LrScaling::Linear) return s.base_lr * b / base;
  const double pivot = static_cast<double>(kSqrtScalingPivot);
  return s.base_lr * (std::min(b, pivot) / base) * std::sqrt(std::max(b, pivot) / pivot);
}

/// Rate for 0-based step t. Warmup ramps from peak / W at t = 0 to peak at
/// t = W - 1; decay applies from t = W on.
inline double lr_at(const LrSchedule& s, Index t, Index batch) {
  if (t < 0 || t > s.total_iterations)
    throw std::invalid_argument("lr_at: step " + std::to_string(t) + " outside [0, " +
                                std::to_string(s.total_iterations) + "]");
  const double peak = peak_lr(s, batch);
  if (t < s.warmup_iters) return peak * (static_cast<double>(t + 1) / static_cast<double>(s.warmup_iters));
  if (s.decay == LrDecay::Multistep) {
    const auto passed = std::upper_bound(s.milestones.begin(), s.milestones.end(), t) - s.milestones.begin();
    return peak * std::pow(s.factor, static_cast<double>(passed));
  }
  const Index span = s.total_iterations - s.warmup_iters;
  if (span <= 0) return peak;
  const double progress = static_cast<double>(t - s.warmup_iters) / static_cast<double>(span);
  return peak * std::pow(1.0 - progress, s.power);
}

}  // namespace agvm
