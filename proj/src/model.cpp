#include "agvm/model.hpp"

#include "agvm/seeding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace agvm {

std::string to_string(HeadMode mode) { return mode == HeadMode::Shared ? "shared" : "independent"; }

HeadMode parse_head_mode(const std::string& text) {
  if (text == "shared") return HeadMode::Shared;
  if (text == "independent") return HeadMode::Independent;
  throw std::invalid_argument("head_mode must be 'shared' or 'independent', got '" + text + "'");
}

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid model config: " + what); };
  if (c.input_dim < 1) fail("input_dim must be positive");
  for (Index w : c.trunk_widths)
    if (w < 1) fail("trunk_widths entries must be positive");
  if (c.levels < 1) fail("levels must be positive");
  if (c.positions < 1) fail("positions must be positive");
  if (c.channels < 1) fail("channels must be positive");
  if (c.head_width < 1) fail("head_width must be positive");
  if (c.output_dim < 1) fail("output_dim must be positive");
  if (c.proposals < 1) fail("proposals must be positive");
  if (!(c.proposal_noise >= 0.0)) fail("proposal_noise must be non-negative");
  if (!(c.mask_fraction >= 0.0 && c.mask_fraction < 1.0)) fail("mask_fraction must lie in [0, 1)");
  const Index levels = c.pyramid ? c.levels : 1;
  if (levels > 62 || c.positions % (Index{1} << (levels - 1)) != 0)
    fail("positions must be divisible by 2^(levels - 1) so every level keeps whole positions");
}

Index kept_terms(Index terms, double mask_fraction) {
  const double kept = std::floor((1.0 - mask_fraction) * static_cast<double>(terms) + 1e-9);
  return std::clamp<Index>(static_cast<Index>(kept), 1, terms);
}

namespace {

enum StreamTag : std::uint64_t { kTrunk = 1, kPyramid = 2, kHead = 100, kSample = 7 };

void fill_he(Vector<double>& params, const ParameterBlock& blk, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(blk.rows)));
  for (Index k = 0; k < blk.size(); ++k) params[blk.offset + k] = dist(rng);
}

}  // namespace

PyramidModel::PyramidModel(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  validate(config_);
  const Index C = config_.channels;
  const Index P = config_.positions;
  const Index levels = active_levels();
  const Index heads = config_.head_mode == HeadMode::Shared ? 1 : levels;

  std::vector<ParameterBlock> blocks;
  std::vector<Module> modules;
  Index offset = 0;
  auto add_block = [&](Module& m, std::string name, Index rows, Index cols) {
    blocks.push_back({std::move(name), rows, cols, offset});
    offset += rows * cols;
    m.blocks.push_back(static_cast<Index>(blocks.size()) - 1);
  };

  Module trunk{"trunk", {}, 0, 0};
  std::vector<Index> widths{config_.input_dim};
  widths.insert(widths.end(), config_.trunk_widths.begin(), config_.trunk_widths.end());
  widths.push_back(P * C);
  trunk_layers_ = static_cast<Index>(widths.size()) - 1;
  for (Index k = 0; k < trunk_layers_; ++k) {
    add_block(trunk, "trunk.w" + std::to_string(k), widths[k], widths[k + 1]);
    add_block(trunk, "trunk.b" + std::to_string(k), 1, widths[k + 1]);
  }
  modules.push_back(std::move(trunk));

  if (config_.pyramid) {
    Module pyr{"pyramid", {}, 0, 0};
    for (Index l = 0; l < levels; ++l) {
      add_block(pyr, "pyramid.w" + std::to_string(l), C, C);
      add_block(pyr, "pyramid.b" + std::to_string(l), 1, C);
    }
    modules.push_back(std::move(pyr));
  }

  for (Index h = 0; h < heads; ++h) {
    const std::string name = heads == 1 ? "head" : "head_" + std::to_string(h + 1);
    Module head{name, {}, 0, 0};
    add_block(head, name + ".w0", C, config_.head_width);
    add_block(head, name + ".b0", 1, config_.head_width);
    add_block(head, name + ".w1", config_.head_width, config_.output_dim);
    add_block(head, name + ".b1", 1, config_.output_dim);
    modules.push_back(std::move(head));
  }

  partition_ = ModulePartition(std::move(blocks), std::move(modules), 0);
  params_ = Vector<double>::Zero(partition_.parameter_count());

  // Each module draws from its own stream, so the trunk is identical across
  // head modes and pyramid settings for a given seed.
  for (Index m = 0; m < partition_.size(); ++m) {
    const Module& mod = partition_[m];
    std::uint64_t tag = kTrunk;
    if (mod.name == "pyramid") tag = kPyramid;
    else if (mod.name == "head") tag = kHead;
    else if (mod.name.rfind("head_", 0) == 0) tag = kHead + std::stoull(mod.name.substr(5)) - 1;
    std::mt19937_64 rng(derive_seed(seed, {tag}));
    for (Index b : mod.blocks) {
      const auto& blk = partition_.blocks()[static_cast<std::size_t>(b)];
      if (blk.rows > 1) fill_he(params_, blk, rng);  // biases (1-row blocks) start at zero
    }
  }

  pool_.resize(static_cast<std::size_t>(levels));
  for (Index l = 0; l < levels; ++l) {
    const Index group = Index{1} << l;
    const Index Pl = P >> l;
    Matrix<double> pool = Matrix<double>::Zero(P * C, Pl * C);
    for (Index p = 0; p < P; ++p)
      for (Index c = 0; c < C; ++c) pool(p * C + c, (p / group) * C + c) = 1.0 / static_cast<double>(group);
    pool_[static_cast<std::size_t>(l)] = std::move(pool);
  }
}

Index PyramidModel::target_width() const {
  Index total = 0;
  for (Index l = 0; l < active_levels(); ++l) total += (config_.positions >> l) * config_.output_dim;
  return total;
}

std::vector<ad::Tensor> PyramidModel::bind(ad::Tape& tape, const Vector<double>& weights, bool requires_grad) const {
  if (weights.size() != partition_.parameter_count())
    throw std::invalid_argument("bind: expected " + std::to_string(partition_.parameter_count()) +
                                " weights, got " + std::to_string(weights.size()));
  std::vector<ad::Tensor> leaves;
  leaves.reserve(partition_.blocks().size());
  for (const auto& blk : partition_.blocks())
    leaves.push_back(
        tape.leaf(Eigen::Map<const Matrix<double>>(weights.data() + blk.offset, blk.rows, blk.cols), requires_grad));
  return leaves;
}

ad::Tensor PyramidModel::forward_loss(ad::Tape& tape, std::span<const ad::Tensor> leaves, const Matrix<double>& inputs,
                                      const Matrix<double>& targets, double mask_fraction, std::uint64_t mask_seed,
                                      std::span<const std::uint64_t> sample_keys) const {
  const Index b = inputs.rows();
  const Index C = config_.channels;
  const Index P = config_.positions;
  const Index K = config_.proposals;
  const Index levels = active_levels();
  const Index E = target_width();
  const Index terms = K * E;

  if (static_cast<Index>(leaves.size()) != static_cast<Index>(partition_.blocks().size()))
    throw std::invalid_argument("forward_loss: wrong number of parameter tensors");
  if (inputs.cols() != config_.input_dim)
    throw std::invalid_argument("forward_loss: inputs have " + std::to_string(inputs.cols()) + " columns, model expects " +
                                std::to_string(config_.input_dim));
  if (targets.rows() != b || targets.cols() != E)
    throw std::invalid_argument("forward_loss: targets shape [" + std::to_string(targets.rows()) + "x" +
                                std::to_string(targets.cols()) + "] does not match [" + std::to_string(b) + "x" +
                                std::to_string(E) + "]");
  if (static_cast<Index>(sample_keys.size()) != b)
    throw std::invalid_argument("forward_loss: one sample key per row is required");
  if (!(mask_fraction >= 0.0 && mask_fraction < 1.0))
    throw std::invalid_argument("forward_loss: mask_fraction must lie in [0, 1)");
  const Index kept = kept_terms(terms, mask_fraction);

  // Per-sample randomness: proposal noise first (level, proposal, position,
  // channel order), then the kept-output draw.
  Index noise_per_sample = 0;
  for (Index l = 0; l < levels; ++l) noise_per_sample += K * (P >> l) * C;
  const bool noisy = config_.proposal_noise > 0.0;
  const bool masked = kept < terms;
  Matrix<double> noise;
  ad::BoolMask keep;
  if (noisy) noise.resize(b, noise_per_sample);
  if (masked) keep = ad::BoolMask::Constant(b, terms, false);
  if (noisy || masked) {
    std::vector<Index> order(static_cast<std::size_t>(terms));
    std::normal_distribution<double> gauss(0.0, config_.proposal_noise);
    for (Index j = 0; j < b; ++j) {
      SplitMix64 rng(derive_seed(mask_seed, {kSample, sample_keys[static_cast<std::size_t>(j)]}));
      if (noisy)
        for (Index k = 0; k < noise_per_sample; ++k) noise(j, k) = gauss(rng);
      if (masked) {
        std::iota(order.begin(), order.end(), Index{0});
        for (Index k = 0; k < kept; ++k) {
          std::uniform_int_distribution<Index> pick(k, terms - 1);
          std::swap(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(pick(rng))]);
          keep(j, order[static_cast<std::size_t>(k)]) = true;
        }
      }
    }
  }

  auto leaf = [&](Index k) { return leaves[static_cast<std::size_t>(k)]; };
  Index next = 0;

  ad::Tensor h = tape.constant(inputs);
  for (Index k = 0; k < trunk_layers_; ++k) {
    h = tape.relu(tape.add(tape.matmul(h, leaf(next)), leaf(next + 1)));
    next += 2;
  }

  const Index pyramid_first = next;
  const Index head_first = config_.pyramid ? next + 2 * levels : next;

  std::vector<ad::Tensor> outputs;
  Matrix<double> target_rep(b, terms);
  Index col = 0;
  Index noise_col = 0;
  Index target_off = 0;
  for (Index l = 0; l < levels; ++l) {
    const Index Pl = P >> l;
    ad::Tensor f = l == 0 ? h : tape.matmul(h, tape.constant(pool_[static_cast<std::size_t>(l)]));
    f = tape.reshape(f, b * Pl, C);
    if (config_.pyramid) {
      const Index p = pyramid_first + 2 * l;
      f = tape.relu(tape.add(tape.matmul(f, leaf(p)), leaf(p + 1)));
    }
    const Index head = head_first + (config_.head_mode == HeadMode::Shared ? 0 : 4 * l);
    for (Index r = 0; r < K; ++r) {
      ad::Tensor z = f;
      if (noisy) {
        Matrix<double> eps(b * Pl, C);
        for (Index j = 0; j < b; ++j)
          eps.middleRows(j * Pl, Pl) =
              Eigen::Map<const Matrix<double>>(noise.row(j).data() + noise_col, Pl, C);
        z = tape.add(z, tape.constant(std::move(eps)));
        noise_col += Pl * C;
      }
      z = tape.relu(tape.add(tape.matmul(z, leaf(head)), leaf(head + 1)));
      z = tape.add(tape.matmul(z, leaf(head + 2)), leaf(head + 3));
      outputs.push_back(tape.reshape(z, b, Pl * config_.output_dim));
      target_rep.middleCols(col, Pl * config_.output_dim) = targets.middleCols(target_off, Pl * config_.output_dim);
      col += Pl * config_.output_dim;
    }
    target_off += Pl * config_.output_dim;
  }

  ad::Tensor prediction = outputs.size() == 1 ? outputs.front() : tape.concat_cols(outputs);
  if (masked) return tape.masked_squared_error(prediction, target_rep, keep);
  return tape.squared_error(prediction, target_rep);
}

PyramidModel::Evaluation PyramidModel::evaluate(const Vector<double>& weights, const Matrix<double>& inputs,
                                                const Matrix<double>& targets, std::uint64_t mask_seed,
                                                std::span<const std::uint64_t> sample_keys) const {
  ad::Tape tape;
  const auto leaves = bind(tape, weights);
  auto loss = forward_loss(tape, leaves, inputs, targets, config_.mask_fraction, mask_seed, sample_keys);
  Evaluation out;
  out.loss = loss.item();
  tape.backward(loss);
  out.gradient.resize(weights.size());
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    const auto& blk = partition_.blocks()[k];
    const auto& g = leaves[k].grad();
    out.gradient.segment(blk.offset, blk.size()) = Eigen::Map<const Vector<double>>(g.data(), g.size());
  }
  return out;
}

}  // namespace agvm
