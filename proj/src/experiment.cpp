#include "agvm/experiment.hpp"

#include "agvm/grad_variance.hpp"
#include "agvm/optimizer.hpp"
#include "agvm/schedule.hpp"
#include "agvm/seeding.hpp"
#include "agvm/worker_pool.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <variant>

namespace agvm {

namespace {

enum StreamTag : std::uint64_t { kModel = 0x30de1, kBatch = 0xba7c, kMask = 0x3a5c };

constexpr double kLogFloor = 1e-12;

using Optimizer = std::variant<AgvmSgd, AgvmAdamW>;

Optimizer make_optimizer(const ExperimentConfig& c, const ModulePartition& partition) {
  const ModulatorConfig mod = modulator_of(c);
  if (c.optimizer.kind == OptimizerKind::Sgd) {
    SgdConfig s;
    s.beta1 = c.optimizer.beta1;
    s.weight_decay = c.optimizer.weight_decay;
    return AgvmSgd(partition, s, mod);
  }
  AdamWConfig a;
  a.beta1 = c.optimizer.beta1;
  a.beta2 = c.optimizer.beta2;
  a.eps = c.optimizer.eps;
  a.weight_decay = c.optimizer.weight_decay;
  return AgvmAdamW(partition, a, mod);
}

Modulator& modulator(Optimizer& opt) {
  return std::visit([](auto& o) -> Modulator& { return o.modulator(); }, opt);
}

struct Batch {
  Matrix<double> inputs;
  Matrix<double> targets;
  std::vector<std::uint64_t> keys;
  std::uint64_t mask_seed = 0;
};

Batch draw(const Dataset& data, Index b, std::uint64_t seed, Index t) {
  std::mt19937_64 rng(derive_seed(seed, {kBatch, static_cast<std::uint64_t>(t)}));
  const auto idx = draw_batch(data.size(), b, Sampling::WithoutReplacement, rng);
  Batch out;
  out.inputs.resize(b, data.inputs.cols());
  out.targets.resize(b, data.targets.cols());
  out.keys.reserve(static_cast<std::size_t>(b));
  for (Index j = 0; j < b; ++j) {
    const Index r = idx[static_cast<std::size_t>(j)];
    out.inputs.row(j) = data.inputs.row(r);
    out.targets.row(j) = data.targets.row(r);
    out.keys.push_back(static_cast<std::uint64_t>(r));
  }
  out.mask_seed = derive_seed(seed, {kMask, static_cast<std::uint64_t>(t)});
  return out;
}

struct StepGradients {
  double loss = 0.0;
  Vector<double> mean;
  std::optional<GroupedGradients> groups;
};

StepGradients per_sample(const PyramidModel& model, const Vector<double>& w, const Batch& batch, WorkerPool& pool) {
  const Index b = batch.inputs.rows();
  std::vector<PyramidModel::Evaluation> evals(static_cast<std::size_t>(b));
  pool.run(b, [&](Index j) {
    const Matrix<double> x = batch.inputs.row(j);
    const Matrix<double> y = batch.targets.row(j);
    const std::uint64_t key = batch.keys[static_cast<std::size_t>(j)];
    evals[static_cast<std::size_t>(j)] = model.evaluate(w, x, y, batch.mask_seed, std::span(&key, 1));
  });
  StepGradients out;
  std::vector<Vector<double>> grads;
  grads.reserve(evals.size());
  for (auto& e : evals) {
    out.loss += e.loss;
    grads.push_back(std::move(e.gradient));
  }
  out.loss /= static_cast<double>(b);
  out.groups = split_groups(std::span<const Vector<double>>(grads), model.partition());
  out.mean = out.groups->flat_mean(model.partition());
  return out;
}

StepGradients batched(const PyramidModel& model, const Vector<double>& w, const Batch& batch) {
  auto ev = model.evaluate(w, batch.inputs, batch.targets, batch.mask_seed, batch.keys);
  StepGradients out;
  out.loss = ev.loss;
  out.mean = std::move(ev.gradient);
  return out;
}

void append_rows(std::vector<TraceRow>& trace, Index t, const ModulePartition& partition, const StepGradients& s,
                 std::span<const double> mu, double eta) {
  const auto phi = phi_estimate(*s.groups, 1.0);
  for (Index i = 0; i < partition.size(); ++i) {
    TraceRow row;
    row.iter = t;
    row.module = partition[i].name;
    row.phi = phi[static_cast<std::size_t>(i)].phi;
    row.mu = mu[static_cast<std::size_t>(i)];
    row.eff_lr = eta * row.mu;
    row.loss = s.loss;
    row.grad_norm_sq = (*s.groups)[i].mean.squaredNorm();
    trace.push_back(std::move(row));
  }
}

}  // namespace

Dataset dataset_for(const ExperimentConfig& config, const PyramidModel& model) {
  DatasetConfig d;
  d.n = config.dataset.n;
  d.input_dim = model.config().input_dim;
  d.output_dim = model.target_width();
  d.noise_std = config.dataset.noise_std;
  d.input_mean = config.dataset.input_mean;
  d.seed = dataset_seed(config);
  return make_dataset(d);
}

RunResult run_experiment(const ExperimentConfig& config) {
  WorkerPool pool(1);
  return run_experiment(config, pool);
}

RunResult run_experiment(const ExperimentConfig& config, WorkerPool& pool) {
  validate(config);
  const PyramidModel model(effective_model(config), derive_seed(config.seed, {kModel}));
  const ModulePartition& partition = model.partition();
  const Dataset data = dataset_for(config, model);
  const LrSchedule schedule = schedule_of(config);
  const Index b = config.batch_size;
  const Index T = config.total_iterations;

  Optimizer opt = make_optimizer(config, partition);
  if (!config.agvm.enabled) modulator(opt).force_unit();
  const Index tau = modulator(opt).config().tau;

  Vector<double> w = model.parameters();
  RunResult result;
  RunSummary& summary = result.summary;

  {
    const auto s = per_sample(model, w, draw(data, b, config.seed, 0), pool);
    append_rows(result.trace, 0, partition, s, modulator(opt).mu(), lr_at(schedule, 0, b));
    result.final_loss = s.loss;
  }

  for (Index t = 1; t <= T; ++t) {
    const Batch batch = draw(data, b, config.seed, t);
    const bool trace_now = t % tau == 0;
    const StepGradients s = trace_now ? per_sample(model, w, batch, pool) : batched(model, w, batch);
    if (!std::isfinite(s.loss)) {
      summary.diverged = true;
      summary.nan_iteration = t;
      break;
    }
    const double eta = lr_at(schedule, t - 1, b);
    const GroupedGradients* groups = s.groups ? &*s.groups : nullptr;
    try {
      std::visit([&](auto& o) { o.step(w, s.mean, groups, eta); }, opt);
    } catch (const std::domain_error&) {
      summary.diverged = true;
      summary.nan_iteration = t;
      break;
    }
    summary.iterations = t;
    result.final_loss = s.loss;
    if (trace_now) append_rows(result.trace, t, partition, s, modulator(opt).mu(), eta);
  }

  const RunSummary stats = summarize(result.trace, partition);
  const bool diverged = summary.diverged;
  const Index nan_at = summary.nan_iteration;
  const Index done = summary.iterations;
  summary = stats;
  summary.diverged = diverged;
  summary.nan_iteration = nan_at;
  summary.iterations = done;
  summary.final_loss = diverged ? std::nan("") : result.final_loss;
  result.final_loss = summary.final_loss;
  return result;
}

RunResult variance_trace(const ExperimentConfig& config, WorkerPool& pool) {
  validate(config);
  const PyramidModel model(effective_model(config), derive_seed(config.seed, {kModel}));
  const ModulePartition& partition = model.partition();
  const Dataset data = dataset_for(config, model);
  const LrSchedule schedule = schedule_of(config);
  const Index b = config.batch_size;
  const Index tau = modulator_of(config).tau;
  const std::vector<double> unit(static_cast<std::size_t>(partition.size()), 1.0);

  RunResult result;
  for (Index t = 0; t <= config.total_iterations; t += tau) {
    const auto s = per_sample(model, model.parameters(), draw(data, b, config.seed, t), pool);
    append_rows(result.trace, t, partition, s, unit, lr_at(schedule, t == 0 ? 0 : t - 1, b));
    result.final_loss = s.loss;
  }
  result.summary = summarize(result.trace, partition);
  result.summary.final_loss = result.final_loss;
  return result;
}

RunSummary summarize(const std::vector<TraceRow>& trace, const ModulePartition& partition) {
  RunSummary s;
  const Index h = partition.size();
  for (const auto& m : partition.modules()) s.modules.push_back(m.name);
  s.phi_mean.assign(static_cast<std::size_t>(h), 0.0);
  s.abs_log_mu_mean.assign(static_cast<std::size_t>(h), 0.0);
  const Index points = static_cast<Index>(trace.size()) / h;
  if (points == 0) return s;

  std::vector<Index> heads;
  for (Index i = 0; i < h; ++i)
    if (partition[i].name.rfind("head", 0) == 0) heads.push_back(i);
  const Index anchor = partition.anchor();

  double gap = 0.0;
  double ratio = 0.0;
  Index ratio_points = 0;
  for (Index p = 0; p < points; ++p) {
    const TraceRow* row = trace.data() + p * h;
    for (Index i = 0; i < h; ++i) {
      s.phi_mean[static_cast<std::size_t>(i)] += row[i].phi;
      s.abs_log_mu_mean[static_cast<std::size_t>(i)] += std::abs(std::log(row[i].mu));
    }
    double point_gap = 0.0;
    for (Index i : heads) point_gap += std::log((row[anchor].phi + kLogFloor) / (row[i].phi + kLogFloor));
    if (!heads.empty()) gap += point_gap / static_cast<double>(heads.size());
    if (row[0].iter > 0) {
      double lo = INFINITY;
      double hi = 0.0;
      for (Index i = 0; i < h; ++i) {
        const double v = row[i].mu * row[i].mu * row[i].phi + kLogFloor;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      ratio += hi / lo;
      ++ratio_points;
    }
  }
  for (Index i = 0; i < h; ++i) {
    s.phi_mean[static_cast<std::size_t>(i)] /= static_cast<double>(points);
    s.abs_log_mu_mean[static_cast<std::size_t>(i)] /= static_cast<double>(points);
  }
  s.phi_gap = gap / static_cast<double>(points);
  s.modulated_phi_ratio = ratio_points > 0 ? ratio / static_cast<double>(ratio_points) : 1.0;
  return s;
}

std::vector<std::string> ablation_arms() {
  return {"shared", "independent_heads", "no_pyramid", "mask(0.75)", "proposals(1)", "proposals(8)"};
}

std::vector<ArmResult> ablation_suite(const ExperimentConfig& base, WorkerPool& pool) {
  if (base.ablation.kind != AblationKind::None || base.model.head_mode != HeadMode::Shared || !base.model.pyramid)
    throw std::invalid_argument("ablation_suite: base config must use a shared head, the pyramid and no ablation");
  const auto names = ablation_arms();
  std::vector<ArmResult> arms(names.size());
  for (std::size_t k = 0; k < names.size(); ++k) {
    arms[k].name = names[k];
    arms[k].config = base;
    if (names[k] != "shared") arms[k].config.ablation = parse_ablation(names[k]);
    validate(arms[k].config);
  }
  pool.run(static_cast<Index>(arms.size()), [&](Index k) {
    auto& arm = arms[static_cast<std::size_t>(k)];
    arm.summary = run_experiment(arm.config).summary;
  });
  return arms;
}

namespace {

void put_real(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  out += buf;
}

}  // namespace

std::string format_summary(const RunSummary& s) {
  std::string out;
  auto line = [&](const std::string& key, double v) {
    out += key + "=";
    put_real(out, v);
    out += '\n';
  };
  out += std::string("status=") + (s.diverged ? "NaN" : "ok") + "\n";
  if (s.diverged) out += "nan_iteration=" + std::to_string(s.nan_iteration) + "\n";
  out += "iterations=" + std::to_string(s.iterations) + "\n";
  line("final_loss", s.final_loss);
  line("phi_gap", s.phi_gap);
  line("modulated_phi_ratio", s.modulated_phi_ratio);
  for (std::size_t i = 0; i < s.modules.size(); ++i) {
    line("phi_mean." + s.modules[i], s.phi_mean[i]);
    line("abs_log_mu_mean." + s.modules[i], s.abs_log_mu_mean[i]);
  }
  return out;
}

std::string csv_text(const std::vector<TraceRow>& trace) {
  std::string out = kCsvHeader;
  out += '\n';
  for (const auto& r : trace) {
    out += std::to_string(r.iter);
    out += ',';
    out += r.module;
    for (double v : {r.phi, r.mu, r.eff_lr, r.loss, r.grad_norm_sq}) {
      out += ',';
      put_real(out, v);
    }
    out += '\n';
  }
  return out;
}

void emit_csv(const std::vector<TraceRow>& trace, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    const std::string text = csv_text(trace);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.close();
    if (!out) throw std::runtime_error("failed writing '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw std::runtime_error("cannot move trace into '" + path + "': " + ec.message());
}

}  // namespace agvm
