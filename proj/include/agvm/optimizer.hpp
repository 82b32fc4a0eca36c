#pragma once

// Adaptive per-module learning-rate modulation and the SGD / AdamW optimizers
// that apply it.
//
// Every `tau` steps the modulator compares each module's variance proxy with
// the anchor module's, mu_i = sqrt((phi_anchor + eps) / (phi_i + eps)), clips
// the ratio to [clip_lo, clip_hi] and folds it into an exponential moving
// average. Module i then steps with learning rate eta_t * mu_i.

#include "agvm/autograd.hpp"
#include "agvm/grad_variance.hpp"
#include "agvm/partition.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agvm {

template <typename Scalar>
struct BasicModulatorConfig {
  Index tau = 10;
  Scalar alpha = Scalar(0.97);
  Scalar clip_lo = Scalar(0.1);
  Scalar clip_hi = Scalar(10);
  Scalar eps_ratio = Scalar(1e-12);
};

template <typename Scalar>
void validate(const BasicModulatorConfig<Scalar>& c) {
  if (c.tau < 1) throw std::invalid_argument("modulator: tau must be >= 1");
  if (!(c.alpha >= Scalar(0) && c.alpha < Scalar(1))) throw std::invalid_argument("modulator: alpha must lie in [0, 1)");
  if (!(c.clip_lo > Scalar(0) && c.clip_lo <= Scalar(1) && c.clip_hi >= Scalar(1)))
    throw std::invalid_argument("modulator: clip bounds must satisfy 0 < clip_lo <= 1 <= clip_hi");
  if (!(c.eps_ratio >= Scalar(0))) throw std::invalid_argument("modulator: eps_ratio must be non-negative");
}

template <typename Scalar>
class BasicModulator {
 public:
  BasicModulator() = default;
  BasicModulator(Index modules, Index anchor, BasicModulatorConfig<Scalar> config = {})
      : config_(config), mu_(static_cast<std::size_t>(modules), Scalar(1)), anchor_(anchor) {
    validate(config_);
    if (modules < 1) throw std::invalid_argument("modulator: at least one module is required");
    if (anchor < 0 || anchor >= modules) throw std::invalid_argument("modulator: anchor out of range");
  }

  const BasicModulatorConfig<Scalar>& config() const { return config_; }
  Index anchor() const { return anchor_; }
  Index size() const { return static_cast<Index>(mu_.size()); }
  std::span<const Scalar> mu() const { return mu_; }
  Scalar mu(Index i) const { return mu_.at(static_cast<std::size_t>(i)); }
  bool enabled() const { return enabled_; }

  /// True when step t (1-based) refreshes mu. Step 0 never does: mu starts at 1.
  bool due(Index t) const { return enabled_ && t > 0 && t % config_.tau == 0; }

  /// Clipped ratios for one phi estimate; the anchor entry is exactly 1.
  std::vector<Scalar> compute_mu(const BasicPhiEstimate<Scalar>& phi) const {
    if (static_cast<Index>(phi.size()) != size())
      throw std::invalid_argument("compute_mu: phi covers " + std::to_string(phi.size()) + " modules, expected " +
                                  std::to_string(size()));
    for (const auto& p : phi)
      if (!std::isfinite(static_cast<double>(p.phi)) || p.phi < Scalar(0))
        throw std::invalid_argument("compute_mu: phi values must be finite and non-negative");
    const Scalar ref = phi[static_cast<std::size_t>(anchor_)].phi + config_.eps_ratio;
    std::vector<Scalar> raw(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (static_cast<Index>(i) == anchor_) {
        raw[i] = Scalar(1);
        continue;
      }
      const Scalar denom = phi[i].phi + config_.eps_ratio;
      // 0/0 only when eps_ratio is zero and both modules are noiseless
      Scalar r = denom > Scalar(0) ? std::sqrt(ref / denom) : (ref > Scalar(0) ? config_.clip_hi : Scalar(1));
      raw[i] = std::clamp(r, config_.clip_lo, config_.clip_hi);
    }
    return raw;
  }

  /// mu <- alpha * mu + (1 - alpha) * raw, for already clipped raw values.
  void smooth(std::span<const Scalar> raw) {
    if (static_cast<Index>(raw.size()) != size()) throw std::invalid_argument("smooth_mu: size mismatch");
    for (std::size_t i = 0; i < mu_.size(); ++i) {
      if (static_cast<Index>(i) == anchor_) continue;
      const Scalar next = config_.alpha * mu_[i] + (Scalar(1) - config_.alpha) * raw[i];
      mu_[i] = std::clamp(next, config_.clip_lo, config_.clip_hi);
    }
  }

  void update(const BasicPhiEstimate<Scalar>& phi) {
    const auto raw = compute_mu(phi);
    smooth(raw);
  }

  /// Pins every mu to 1 and stops refreshes.
  void force_unit() {
    std::fill(mu_.begin(), mu_.end(), Scalar(1));
    enabled_ = false;
  }
  void enable() { enabled_ = true; }

  /// Restores a stored state (checkpoint loading).
  void restore(std::vector<Scalar> mu, bool enabled) {
    if (static_cast<Index>(mu.size()) != size()) throw std::invalid_argument("modulator: restore size mismatch");
    mu_ = std::move(mu);
    enabled_ = enabled;
  }

 private:
  BasicModulatorConfig<Scalar> config_;
  std::vector<Scalar> mu_;
  Index anchor_ = 0;
  bool enabled_ = true;
};

template <typename Scalar>
std::vector<Scalar> compute_mu(const BasicPhiEstimate<Scalar>& phi, const BasicModulator<Scalar>& state) {
  return state.compute_mu(phi);
}

template <typename Scalar>
void smooth_mu(BasicModulator<Scalar>& state, std::span<const Scalar> raw) {
  state.smooth(raw);
}

template <typename Scalar>
void force_unit_mu(BasicModulator<Scalar>& state) {
  state.force_unit();
}

namespace detail {

template <typename Scalar>
void require_finite(const ModulePartition& partition, const Vector<Scalar>& v, const char* what) {
  for (Index i = 0; i < partition.size(); ++i)
    if (!partition.slice(v, i).allFinite())
      throw std::domain_error(std::string("non-finite ") + what + " in module '" + partition[i].name + "'");
}

}  // namespace detail

template <typename Scalar>
struct BasicSgdConfig {
  Scalar beta1 = Scalar(0.9);
  Scalar weight_decay = Scalar(1e-4);
};

/// SGD with decay-coupled momentum, m = b1 m + (1 - b1)(g + lambda w), and
/// per-module step w_i -= eta mu_i m_i.
template <typename Scalar>
class BasicAgvmSgd {
 public:
  BasicAgvmSgd(ModulePartition partition, BasicSgdConfig<Scalar> config = {}, BasicModulatorConfig<Scalar> mod = {})
      : partition_(std::move(partition)),
        config_(config),
        modulator_(partition_.size(), partition_.anchor(), mod),
        m_(Vector<Scalar>::Zero(partition_.parameter_count())) {
    if (!(config_.beta1 >= Scalar(0) && config_.beta1 < Scalar(1)))
      throw std::invalid_argument("sgd: beta1 must lie in [0, 1)");
  }

  /// One step. `groups` must be provided on steps where the modulator is due.
  void step(Vector<Scalar>& w, const Vector<Scalar>& g, const BasicGroupedGradients<Scalar>* groups, Scalar eta) {
    check_sizes(w, g);
    detail::require_finite(partition_, g, "gradient");
    if (!(eta >= Scalar(0))) throw std::invalid_argument("sgd: learning rate must be non-negative");
    const Index t = t_ + 1;
    if (modulator_.due(t)) {
      if (groups == nullptr) throw std::invalid_argument("sgd: grouped gradients are required at step " + std::to_string(t));
      modulator_.update(phi_estimate(*groups, eta));
    }
    m_ = config_.beta1 * m_ + (Scalar(1) - config_.beta1) * (g + config_.weight_decay * w);
    Vector<Scalar> delta(w.size());
    for (Index i = 0; i < partition_.size(); ++i) partition_.slice(delta, i) = (eta * modulator_.mu(i)) * partition_.slice(m_, i);
    detail::require_finite(partition_, delta, "update");
    w -= delta;
    t_ = t;
  }

  Index steps() const { return t_; }
  const ModulePartition& partition() const { return partition_; }
  const BasicSgdConfig<Scalar>& config() const { return config_; }
  BasicModulator<Scalar>& modulator() { return modulator_; }
  const BasicModulator<Scalar>& modulator() const { return modulator_; }
  const Vector<Scalar>& momentum() const { return m_; }

  void restore(Index steps, Vector<Scalar> m) {
    if (m.size() != m_.size()) throw std::invalid_argument("sgd: restore size mismatch");
    t_ = steps;
    m_ = std::move(m);
  }

 private:
  void check_sizes(const Vector<Scalar>& w, const Vector<Scalar>& g) const {
    if (w.size() != partition_.parameter_count() || g.size() != partition_.parameter_count())
      throw std::invalid_argument("sgd: parameter / gradient size does not match the partition");
  }

  ModulePartition partition_;
  BasicSgdConfig<Scalar> config_;
  BasicModulator<Scalar> modulator_;
  Vector<Scalar> m_;
  Index t_ = 0;
};

template <typename Scalar>
struct BasicAdamWConfig {
  Scalar beta1 = Scalar(0.9);
  Scalar beta2 = Scalar(0.999);
  Scalar eps = Scalar(1e-8);
  Scalar weight_decay = Scalar(0.05);
};

/// AdamW with r = m_hat / sqrt(v_hat + eps) and per-module step
/// w_i -= eta mu_i (r_i + lambda w_i). Phi is measured on the half-batch
/// means divided elementwise by sqrt(v + eps), using this step's v before
/// bias correction.
template <typename Scalar>
class BasicAgvmAdamW {
 public:
  BasicAgvmAdamW(ModulePartition partition, BasicAdamWConfig<Scalar> config = {}, BasicModulatorConfig<Scalar> mod = {})
      : partition_(std::move(partition)),
        config_(config),
        modulator_(partition_.size(), partition_.anchor(), mod),
        m_(Vector<Scalar>::Zero(partition_.parameter_count())),
        v_(Vector<Scalar>::Zero(partition_.parameter_count())) {
    if (!(config_.beta1 >= Scalar(0) && config_.beta1 < Scalar(1)) ||
        !(config_.beta2 >= Scalar(0) && config_.beta2 < Scalar(1)))
      throw std::invalid_argument("adamw: beta1 and beta2 must lie in [0, 1)");
    if (!(config_.eps > Scalar(0))) throw std::invalid_argument("adamw: eps must be positive");
  }

  void step(Vector<Scalar>& w, const Vector<Scalar>& g, const BasicGroupedGradients<Scalar>* groups, Scalar eta) {
    if (w.size() != partition_.parameter_count() || g.size() != partition_.parameter_count())
      throw std::invalid_argument("adamw: parameter / gradient size does not match the partition");
    detail::require_finite(partition_, g, "gradient");
    if (!(eta >= Scalar(0))) throw std::invalid_argument("adamw: learning rate must be non-negative");
    const Index t = t_ + 1;

    m_ = config_.beta1 * m_ + (Scalar(1) - config_.beta1) * g;
    v_ = config_.beta2 * v_ + (Scalar(1) - config_.beta2) * g.cwiseAbs2();

    if (modulator_.due(t)) {
      if (groups == nullptr)
        throw std::invalid_argument("adamw: grouped gradients are required at step " + std::to_string(t));
      BasicGroupedGradients<Scalar> scaled = *groups;
      for (Index i = 0; i < partition_.size(); ++i) {
        const auto denom = (partition_.slice(v_, i).array() + config_.eps).sqrt();
        auto& mg = scaled.modules[static_cast<std::size_t>(i)];
        mg.first = (mg.first.array() / denom).matrix();
        mg.second = (mg.second.array() / denom).matrix();
        mg.mean = (mg.first + mg.second) / Scalar(2);
      }
      modulator_.update(phi_estimate(scaled, eta));
    }

    const Scalar c1 = Scalar(1) - std::pow(config_.beta1, static_cast<Scalar>(t));
    const Scalar c2 = Scalar(1) - std::pow(config_.beta2, static_cast<Scalar>(t));
    Vector<Scalar> delta(w.size());
    for (Index i = 0; i < partition_.size(); ++i) {
      const Scalar lr = eta * modulator_.mu(i);
      const auto r = (partition_.slice(m_, i).array() / c1) / ((partition_.slice(v_, i).array() / c2) + config_.eps).sqrt();
      partition_.slice(delta, i) = (lr * (r + config_.weight_decay * partition_.slice(w, i).array())).matrix();
    }
    detail::require_finite(partition_, delta, "update");
    w -= delta;
    t_ = t;
  }

  Index steps() const { return t_; }
  const ModulePartition& partition() const { return partition_; }
  const BasicAdamWConfig<Scalar>& config() const { return config_; }
  BasicModulator<Scalar>& modulator() { return modulator_; }
  const BasicModulator<Scalar>& modulator() const { return modulator_; }
  const Vector<Scalar>& first_moment() const { return m_; }
  const Vector<Scalar>& second_moment() const { return v_; }

  void restore(Index steps, Vector<Scalar> m, Vector<Scalar> v) {
    if (m.size() != m_.size() || v.size() != v_.size()) throw std::invalid_argument("adamw: restore size mismatch");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  ModulePartition partition_;
  BasicAdamWConfig<Scalar> config_;
  BasicModulator<Scalar> modulator_;
  Vector<Scalar> m_;
  Vector<Scalar> v_;
  Index t_ = 0;
};

using ModulatorConfig = BasicModulatorConfig<double>;
using Modulator = BasicModulator<double>;
using SgdConfig = BasicSgdConfig<double>;
using AdamWConfig = BasicAdamWConfig<double>;
using AgvmSgd = BasicAgvmSgd<double>;
using AgvmAdamW = BasicAgvmAdamW<double>;

}  // namespace agvm
