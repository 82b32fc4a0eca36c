#include "agvm/benchmark.hpp"

#include "agvm/seeding.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace agvm {

LinearRegression::LinearRegression(Index input_dim, Index output_dim)
    : input_dim_(input_dim),
      output_dim_(output_dim),
      partition_(ModulePartition::contiguous({{"weight", input_dim * output_dim}, {"bias", output_dim}})) {}

Vector<double> LinearRegression::constant_parameters(double weight, double bias) const {
  Vector<double> w(partition_.parameter_count());
  partition_.slice(w, 0).setConstant(weight);
  partition_.slice(w, 1).setConstant(bias);
  return w;
}

Vector<double> LinearRegression::sample_gradient(const Vector<double>& w, const Dataset& data, Index row) const {
  const Eigen::Map<const Matrix<double>> W(w.data(), output_dim_, input_dim_);
  const auto c = w.segment(output_dim_ * input_dim_, output_dim_);
  const Vector<double> x = data.inputs.row(row).transpose();
  const Vector<double> r = (W * x + c - data.targets.row(row).transpose()) * (2.0 / static_cast<double>(output_dim_));
  Vector<double> g(w.size());
  Eigen::Map<Matrix<double>>(g.data(), output_dim_, input_dim_) = r * x.transpose();
  g.tail(output_dim_) = r;
  return g;
}

std::vector<VarianceComparison> oracle_check(const LinearBenchmarkConfig& c) {
  if (c.resamples < 1) throw std::invalid_argument("oracle_check: resamples must be positive");
  DatasetConfig dc;
  dc.n = c.n;
  dc.input_dim = c.input_dim;
  dc.output_dim = c.output_dim;
  dc.noise_std = c.noise_std;
  dc.input_mean = c.input_mean;
  dc.seed = derive_seed(c.seed, {1});
  const Dataset data = make_dataset(dc);
  const LinearRegression model(c.input_dim, c.output_dim);
  const ModulePartition& partition = model.partition();
  const Vector<double> w = model.constant_parameters(c.weight_init, c.bias_init);

  std::vector<Vector<double>> grads;
  grads.reserve(static_cast<std::size_t>(c.n));
  for (Index j = 0; j < c.n; ++j) grads.push_back(model.sample_gradient(w, data, j));

  std::vector<double> estimate(static_cast<std::size_t>(partition.size()), 0.0);
  std::mt19937_64 rng(derive_seed(c.seed, {2}));
  std::vector<Vector<double>> batch(static_cast<std::size_t>(c.batch_size));
  for (Index r = 0; r < c.resamples; ++r) {
    const auto idx = draw_batch(c.n, c.batch_size, Sampling::WithoutReplacement, rng);
    for (std::size_t k = 0; k < idx.size(); ++k) batch[k] = grads[static_cast<std::size_t>(idx[k])];
    const auto groups = split_groups(std::span<const Vector<double>>(batch), partition);
    const auto v = full_variance_estimate(groups, c.n, 1.0);
    for (std::size_t i = 0; i < v.size(); ++i) estimate[i] += v[i];
  }

  OracleOptions opts;
  opts.batch_size = c.batch_size;
  opts.resamples = c.resamples;
  opts.seed = derive_seed(c.seed, {3});
  opts.sampling = Sampling::WithoutReplacement;
  const PerSampleGradient<double> gradient_of = [&](Index j) { return grads[static_cast<std::size_t>(j)]; };
  const auto oracle = brute_force_variance_oracle(gradient_of, c.n, partition, opts);

  std::vector<VarianceComparison> out;
  for (Index i = 0; i < partition.size(); ++i) {
    VarianceComparison v;
    v.module = partition[i].name;
    v.estimate = estimate[static_cast<std::size_t>(i)] / static_cast<double>(c.resamples) /
                 static_cast<double>(partition[i].size);
    v.oracle = oracle[static_cast<std::size_t>(i)];
    v.relative_error = std::abs(v.estimate - v.oracle) / v.oracle;
    out.push_back(std::move(v));
  }
  return out;
}

ad::GradCheckReport mlp_grad_check(const MlpCheckConfig& c) {
  ad::GradCheckReport worst;
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Index m = 0; m < c.models; ++m) {
    std::mt19937_64 rng(derive_seed(c.seed, {4, static_cast<std::uint64_t>(m)}));
    std::uniform_int_distribution<Index> width(2, 8);
    const Index dims[4] = {width(rng), width(rng), width(rng), width(rng)};
    auto random = [&](Index rows, Index cols, double scale) {
      Matrix<double> out(rows, cols);
      for (Index k = 0; k < out.size(); ++k) out.data()[k] = scale * unit(rng);
      return out;
    };
    const Matrix<double> x = random(c.batch, dims[0], 1.0);
    const Matrix<double> y = random(c.batch, dims[3], 1.0);
    std::vector<ad::Parameter> params;
    for (int l = 0; l < 3; ++l) {
      params.push_back({random(dims[l], dims[l + 1], 1.0 / std::sqrt(static_cast<double>(dims[l]))), true});
      params.push_back({random(1, dims[l + 1], 0.1), true});
    }
    const ad::LossBuilder<double> build = [&](ad::Tape& tape, std::span<const ad::Tensor> p) {
      ad::Tensor h = tape.constant(x);
      for (std::size_t l = 0; l < 3; ++l) {
        h = tape.add(tape.matmul(h, p[2 * l]), p[2 * l + 1]);
        if (l < 2) h = tape.relu(h);
      }
      return tape.squared_error(h, y);
    };
    ad::GradCheckOptions opts;
    opts.probe_count = c.probes;
    opts.seed = derive_seed(c.seed, {5, static_cast<std::uint64_t>(m)});
    const auto r = ad::grad_check(build, params, opts);
    worst.max_relative_error = std::max(worst.max_relative_error, r.max_relative_error);
    worst.probed += r.probed;
    worst.skipped_kinks += r.skipped_kinks;
  }
  return worst;
}

}  // namespace agvm
