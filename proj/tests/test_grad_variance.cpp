#include "agvm/benchmark.hpp"
#include "agvm/grad_variance.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

using agvm::Index;
using agvm::ModulePartition;
using agvm::Vector;

namespace {

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Index>(v.size()));
  Index k = 0;
  for (double x : v) out[k++] = x;
  return out;
}

std::vector<Vector<double>> random_samples(std::mt19937_64& rng, Index b, Index d) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<Vector<double>> out;
  for (Index j = 0; j < b; ++j) {
    Vector<double> v(d);
    for (Index k = 0; k < d; ++k) v[k] = unit(rng) + 0.3;
    out.push_back(v);
  }
  return out;
}

agvm::GroupedGradients groups_of(const std::vector<Vector<double>>& s, const ModulePartition& p) {
  return agvm::split_groups(std::span<const Vector<double>>(s), p);
}

}  // namespace

TEST(CosineSimilarity, Examples) {
  EXPECT_DOUBLE_EQ(agvm::cosine_similarity(vec({1, 0}), vec({1, 0})), 1.0);
  EXPECT_DOUBLE_EQ(agvm::cosine_similarity(vec({1, 0}), vec({0, 1})), 0.0);
  EXPECT_NEAR(agvm::cosine_similarity(vec({1, 2, 2}), vec({2, 1, 2})), 8.0 / 9.0, 1e-15);
}

TEST(CosineSimilarity, ZeroVectorGivesZero) {
  EXPECT_EQ(agvm::cosine_similarity(vec({0, 0}), vec({1, 1})), 0.0);
  EXPECT_EQ(agvm::cosine_similarity(vec({1e-13, 0}), vec({1, 1})), 0.0);
}

TEST(CosineSimilarity, LengthMismatchIsAnError) {
  EXPECT_THROW(agvm::cosine_similarity(vec({1, 0}), vec({1, 0, 0})), std::invalid_argument);
}

TEST(CosineSimilarity, StaysInRange) {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 200; ++k) {
    const auto s = random_samples(rng, 2, 7);
    const double c = agvm::cosine_similarity(s[0], s[1]);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    EXPECT_DOUBLE_EQ(agvm::cosine_similarity(s[0], s[0] * 3.0), 1.0);
  }
}

TEST(SplitGroups, InterleavedHalves) {
  const auto p = ModulePartition::contiguous({{"a", 1}});
  const std::vector<Vector<double>> s = {vec({1}), vec({3}), vec({5}), vec({7})};
  const auto g = groups_of(s, p);
  EXPECT_EQ(g.batch_size, 4);
  EXPECT_DOUBLE_EQ(g[0].first[0], 3.0);
  EXPECT_DOUBLE_EQ(g[0].second[0], 5.0);
  EXPECT_DOUBLE_EQ(g[0].mean[0], 4.0);
}

TEST(SplitGroups, BatchOfTwo) {
  const auto p = ModulePartition::contiguous({{"a", 2}});
  const std::vector<Vector<double>> s = {vec({1, 2}), vec({3, 4})};
  const auto g = groups_of(s, p);
  EXPECT_EQ(g[0].first, s[0]);
  EXPECT_EQ(g[0].second, s[1]);
}

TEST(SplitGroups, OddOrEmptyBatchIsAnError) {
  const auto p = ModulePartition::contiguous({{"a", 1}});
  const std::vector<Vector<double>> three = {vec({1}), vec({2}), vec({3})};
  EXPECT_THROW(groups_of(three, p), std::invalid_argument);
  EXPECT_THROW(groups_of({}, p), std::invalid_argument);
  try {
    groups_of(three, p);
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("drop or pad"), std::string::npos);
  }
}

TEST(SplitGroups, WrongSampleLengthIsAnError) {
  const auto p = ModulePartition::contiguous({{"a", 2}});
  const std::vector<Vector<double>> s = {vec({1, 2}), vec({3})};
  EXPECT_THROW(groups_of(s, p), std::invalid_argument);
}

TEST(SplitGroups, ModuleSlicesAndMeanReconstruction) {
  std::mt19937_64 rng(17);
  for (Index b : {2, 4, 8, 16, 64}) {
    const auto p = ModulePartition::contiguous({{"trunk", 5}, {"pyramid", 3}, {"head", 4}});
    const auto s = random_samples(rng, b, p.parameter_count());
    const auto g = groups_of(s, p);
    Vector<double> direct = Vector<double>::Zero(p.parameter_count());
    for (const auto& r : s) direct += r;
    direct /= static_cast<double>(b);
    EXPECT_LT((g.flat_mean(p) - direct).cwiseAbs().maxCoeff(), 1e-12);
    for (Index i = 0; i < p.size(); ++i) {
      EXPECT_EQ(g[i].first.size(), p[i].size);
      EXPECT_LT(((g[i].first + g[i].second) / 2.0 - g[i].mean).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(PhiEstimate, Examples) {
  const auto p = ModulePartition::contiguous({{"a", 2}});
  const std::vector<Vector<double>> same = {vec({1, 2}), vec({1, 2})};
  EXPECT_NEAR(agvm::phi_estimate(groups_of(same, p), 0.1)[0].phi, 0.0, 1e-17);

  const std::vector<Vector<double>> ortho = {vec({1, 0}), vec({0, 1})};
  EXPECT_NEAR(agvm::phi_estimate(groups_of(ortho, p), 0.1)[0].phi, 0.01, 1e-15);

  const std::vector<Vector<double>> sixty = {vec({1, 0}), vec({0.5, std::sqrt(3.0) / 2.0})};
  const auto phi = agvm::phi_estimate(groups_of(sixty, p), 1.0);
  EXPECT_NEAR(phi[0].cosine, 0.5, 1e-15);
  EXPECT_NEAR(phi[0].phi, 0.5, 1e-15);
  EXPECT_EQ(phi[0].eta, 1.0);
}

TEST(PhiEstimate, NegativeEtaIsAnError) {
  const auto p = ModulePartition::contiguous({{"a", 1}});
  const std::vector<Vector<double>> s = {vec({1}), vec({2})};
  EXPECT_THROW(agvm::phi_estimate(groups_of(s, p), -0.1), std::invalid_argument);
}

TEST(PhiEstimate, InvariantsOnRandomCases) {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> eta_dist(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto p = ModulePartition::contiguous({{"a", 3}, {"b", 6}});
    const auto s = random_samples(rng, 6, p.parameter_count());
    const auto g = groups_of(s, p);
    const double eta = eta_dist(rng);
    for (const auto& m : agvm::phi_estimate(g, eta)) {
      EXPECT_GE(m.phi, 0.0);
      EXPECT_NEAR(m.phi, eta * eta * (1.0 - m.cosine), 1e-12);
      EXPECT_GE(m.cosine, -1.0);
      EXPECT_LE(m.cosine, 1.0);
    }
  }
}

TEST(PhiEstimate, ScaleInvariance) {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = ModulePartition::contiguous({{"a", 4}, {"b", 2}});
    auto s = random_samples(rng, 4, p.parameter_count());
    const double before = agvm::phi_estimate(groups_of(s, p), 1.0)[0].phi;
    for (auto& r : s) r *= 37.5;
    const double after = agvm::phi_estimate(groups_of(s, p), 1.0)[0].phi;
    EXPECT_NEAR(before, after, 1e-12);
  }
}

TEST(PhiEstimate, PermutationWithinModule) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = ModulePartition::contiguous({{"a", 8}});
    auto s = random_samples(rng, 4, 8);
    const double before = agvm::phi_estimate(groups_of(s, p), 1.0)[0].phi;
    for (auto& r : s) r = r.reverse().eval();
    const double after = agvm::phi_estimate(groups_of(s, p), 1.0)[0].phi;
    EXPECT_NEAR(before, after, 1e-15);  // equal up to summation order
  }
}

TEST(FullVariance, FactorAtBoundaries) {
  const auto p = ModulePartition::contiguous({{"a", 2}});
  const std::vector<Vector<double>> s = {vec({1, 0}), vec({0, 1})};
  const auto g = groups_of(s, p);
  EXPECT_EQ(agvm::full_variance_estimate(g, 2, 1.0)[0], 0.0);
  // phi = 1, |g|^2 = 0.5, factor -> 1/2 as n grows
  EXPECT_NEAR(agvm::full_variance_estimate(g, 1'000'000'000, 1.0)[0], 0.25, 1e-9);
  EXPECT_NEAR(agvm::full_variance_estimate(g, 6, 1.0)[0], (4.0 / 10.0) * 0.5, 1e-15);
  EXPECT_THROW(agvm::full_variance_estimate(g, 1, 1.0), std::invalid_argument);
}

TEST(DrawBatch, WithoutReplacementHasNoRepeats) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    auto idx = agvm::draw_batch(50, 50, agvm::Sampling::WithoutReplacement, rng);
    std::sort(idx.begin(), idx.end());
    for (Index i = 0; i < 50; ++i) EXPECT_EQ(idx[static_cast<std::size_t>(i)], i);
  }
  const auto r = agvm::draw_batch(5, 200, agvm::Sampling::WithReplacement, rng);
  EXPECT_EQ(r.size(), 200u);
  for (Index i : r) EXPECT_TRUE(i >= 0 && i < 5);
}

TEST(Oracle, FullBatchWithoutReplacementIsZero) {
  const auto p = ModulePartition::contiguous({{"a", 2}});
  const agvm::PerSampleGradient<double> grad = [](Index j) { return vec({double(j), 1.0 - j}); };
  agvm::OracleOptions o;
  o.batch_size = 8;
  o.sampling = agvm::Sampling::WithoutReplacement;
  const auto v = agvm::brute_force_variance_oracle(grad, 8, p, o);
  EXPECT_LT(v[0], 1e-28);
}

TEST(Oracle, NoiselessLinearModelAtOptimumIsZero) {
  agvm::DatasetConfig dc{.n = 64, .input_dim = 3, .output_dim = 2, .noise_std = 0.0, .input_mean = 0.0, .seed = 4};
  const auto data = agvm::make_dataset(dc);
  const agvm::LinearRegression model(3, 2);
  Vector<double> w = model.constant_parameters(0.0, 0.0);
  Eigen::Map<agvm::Matrix<double>>(w.data(), 2, 3) = data.map;
  const agvm::PerSampleGradient<double> grad = [&](Index j) { return model.sample_gradient(w, data, j); };
  const auto v = agvm::brute_force_variance_oracle(grad, 64, model.partition(), {.batch_size = 8, .resamples = 100});
  for (double x : v) EXPECT_LT(x, 1e-28);
}

// Two-parameter least squares: the mini-batch mean of b i.i.d. draws (with
// replacement) has variance Var(r) / b per coordinate.
TEST(Oracle, MatchesClosedFormPopulationVariance) {
  const Index n = 8, b = 2;
  std::mt19937_64 rng(77);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<Vector<double>> r;
  for (Index j = 0; j < n; ++j) r.push_back(vec({unit(rng), unit(rng)}));
  Vector<double> mean = Vector<double>::Zero(2);
  for (const auto& x : r) mean += x;
  mean /= double(n);
  double pop = 0.0, fourth = 0.0;
  for (const auto& x : r) {
    pop += (x - mean).squaredNorm();
    fourth += std::pow((x - mean).squaredNorm(), 2);
  }
  pop /= double(n);
  fourth /= double(n);
  const double expected = pop / double(b) / 2.0;  // per parameter

  const Index resamples = 20000;
  const auto p = ModulePartition::contiguous({{"w", 2}});
  const agvm::PerSampleGradient<double> grad = [&](Index j) { return r[static_cast<std::size_t>(j)]; };
  const auto v = agvm::brute_force_variance_oracle(grad, n, p, {.batch_size = b, .resamples = resamples, .seed = 5});
  // standard error of the Monte-Carlo mean of |g - mu|^2 / 2, bounded using
  // the second moment of a single-draw deviation
  const double se = std::sqrt(fourth) / double(b) / 2.0 / std::sqrt(double(resamples)) * 2.0;
  EXPECT_NEAR(v[0], expected, 3.0 * se);
}

TEST(Oracle, ParameterValidation) {
  const auto p = ModulePartition::contiguous({{"a", 1}});
  const agvm::PerSampleGradient<double> grad = [](Index) { return vec({1.0}); };
  EXPECT_THROW(agvm::brute_force_variance_oracle(grad, 4, p, {.batch_size = 5, .resamples = 100}), std::invalid_argument);
  EXPECT_THROW(agvm::brute_force_variance_oracle(grad, 4, p, {.batch_size = 2, .resamples = 99}), std::invalid_argument);
}

TEST(Oracle, PlugInEstimateTracksBruteForceOnLinearRegression) {
  for (const auto& v : agvm::oracle_check({.noise_std = 0.5, .seed = 3})) EXPECT_LT(v.relative_error, 0.15) << v.module;
}
