#include "agvm/config.hpp"

#include "agvm/seeding.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace agvm {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw std::invalid_argument("config key '" + key + "': expected " + expected + ", got '" + value + "'");
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(const std::string& text, T& out) {
  const char* first = text.data();
  const char* last = first + text.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc() && res.ptr == last && first != last;
}

Index to_index(const std::string& key, const std::string& v) {
  Index out = 0;
  if (!parse_number(v, out)) bad_value(key, v, "an integer");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  if (!parse_number(v, out)) bad_value(key, v, "a real number");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  if (!parse_number(v, out)) bad_value(key, v, "a non-negative integer");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::vector<Index> to_list(const std::string& key, const std::string& v) {
  std::vector<Index> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_index(key, trim(item)));
  return out;
}

std::string real_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string list_text(const std::vector<Index>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

struct Entry {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define AGVM_INDEX(KEY, FIELD)                                                             \
  Entry{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_index(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::to_string(c.FIELD); }}
#define AGVM_REAL(KEY, FIELD)                                                             \
  Entry{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_real(KEY, v); }, \
        [](const ExperimentConfig& c) { return real_text(c.FIELD); }}
#define AGVM_BOOL(KEY, FIELD)                                                             \
  Entry{KEY, [](ExperimentConfig& c, const std::string& v) { c.FIELD = to_bool(KEY, v); }, \
        [](const ExperimentConfig& c) { return std::string(c.FIELD ? "true" : "false"); }}

const std::vector<Entry>& entries() {
  static const std::vector<Entry> table = {
      AGVM_INDEX("model.input_dim", model.input_dim),
      Entry{"model.trunk_widths",
            [](ExperimentConfig& c, const std::string& v) { c.model.trunk_widths = to_list("model.trunk_widths", v); },
            [](const ExperimentConfig& c) { return list_text(c.model.trunk_widths); }},
      AGVM_INDEX("model.levels", model.levels),
      AGVM_INDEX("model.positions", model.positions),
      AGVM_INDEX("model.channels", model.channels),
      AGVM_INDEX("model.head_width", model.head_width),
      AGVM_INDEX("model.output_dim", model.output_dim),
      Entry{"model.head_mode",
            [](ExperimentConfig& c, const std::string& v) { c.model.head_mode = parse_head_mode(v); },
            [](const ExperimentConfig& c) { return to_string(c.model.head_mode); }},
      AGVM_BOOL("model.pyramid", model.pyramid),
      AGVM_REAL("model.mask_fraction", model.mask_fraction),
      AGVM_INDEX("model.proposals", model.proposals),
      AGVM_REAL("model.proposal_noise", model.proposal_noise),
      AGVM_INDEX("dataset.n", dataset.n),
      AGVM_REAL("dataset.noise_std", dataset.noise_std),
      AGVM_REAL("dataset.input_mean", dataset.input_mean),
      Entry{"dataset.seed",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "auto") c.dataset.seed.reset();
              else c.dataset.seed = to_u64("dataset.seed", v);
            },
            [](const ExperimentConfig& c) { return c.dataset.seed ? std::to_string(*c.dataset.seed) : "auto"; }},
      Entry{"optimizer",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "sgd") c.optimizer.kind = OptimizerKind::Sgd;
              else if (v == "adamw") c.optimizer.kind = OptimizerKind::AdamW;
              else bad_value("optimizer", v, "sgd or adamw");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.optimizer.kind == OptimizerKind::Sgd ? "sgd" : "adamw");
            }},
      AGVM_REAL("optimizer.beta1", optimizer.beta1),
      AGVM_REAL("optimizer.beta2", optimizer.beta2),
      AGVM_REAL("optimizer.eps", optimizer.eps),
      AGVM_REAL("optimizer.weight_decay", optimizer.weight_decay),
      AGVM_INDEX("batch_size", batch_size),
      AGVM_INDEX("total_iterations", total_iterations),
      AGVM_REAL("lr.base_lr", lr.base_lr),
      AGVM_INDEX("lr.base_batch", lr.base_batch),
      AGVM_INDEX("lr.warmup_iters", lr.warmup_iters),
      Entry{"lr.scaling",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "linear") c.lr.scaling = LrScaling::Linear;
              else if (v == "linear-then-sqrt") c.lr.scaling = LrScaling::LinearThenSqrt;
              else bad_value("lr.scaling", v, "linear or linear-then-sqrt");
            },
            [](const ExperimentConfig& c) {
              return std::string(c.lr.scaling == LrScaling::Linear ? "linear" : "linear-then-sqrt");
            }},
      Entry{"lr.decay",
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "multistep") c.lr.decay = LrDecay::Multistep;
              else if (v == "poly") c.lr.decay = LrDecay::Poly;
              else bad_value("lr.decay", v, "multistep or poly");
            },
            [](const ExperimentConfig& c) { return std::string(c.lr.decay == LrDecay::Multistep ? "multistep" : "poly"); }},
      Entry{"lr.milestones",
            [](ExperimentConfig& c, const std::string& v) { c.lr.milestones = to_list("lr.milestones", v); },
            [](const ExperimentConfig& c) { return list_text(c.lr.milestones); }},
      AGVM_REAL("lr.factor", lr.factor),
      AGVM_REAL("lr.power", lr.power),
      AGVM_BOOL("agvm.enabled", agvm.enabled),
      Entry{"agvm.tau",
            [](ExperimentConfig& c, const std::string& v) { c.agvm.tau = v == "auto" ? 0 : to_index("agvm.tau", v); },
            [](const ExperimentConfig& c) { return c.agvm.tau == 0 ? std::string("auto") : std::to_string(c.agvm.tau); }},
      AGVM_REAL("agvm.alpha", agvm.alpha),
      AGVM_REAL("agvm.clip_lo", agvm.clip_lo),
      AGVM_REAL("agvm.clip_hi", agvm.clip_hi),
      AGVM_REAL("agvm.eps_ratio", agvm.eps_ratio),
      Entry{"ablation", [](ExperimentConfig& c, const std::string& v) { c.ablation = parse_ablation(v); },
            [](const ExperimentConfig& c) { return to_string(c.ablation); }},
      Entry{"seed", [](ExperimentConfig& c, const std::string& v) { c.seed = to_u64("seed", v); },
            [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
  };
  return table;
}

#undef AGVM_INDEX
#undef AGVM_REAL
#undef AGVM_BOOL

const Entry& find_entry(const std::string& key) {
  for (const auto& e : entries())
    if (key == e.key) return e;
  throw std::invalid_argument("unknown config key '" + key + "'");
}

}  // namespace

Ablation parse_ablation(const std::string& text) {
  Ablation a;
  const std::string t = trim(text);
  auto argument = [&](const std::string& prefix) -> std::optional<std::string> {
    if (t.size() > prefix.size() + 2 && t.compare(0, prefix.size() + 1, prefix + "(") == 0 && t.back() == ')')
      return trim(t.substr(prefix.size() + 1, t.size() - prefix.size() - 2));
    return std::nullopt;
  };
  if (t == "none") return a;
  if (t == "independent_heads") {
    a.kind = AblationKind::IndependentHeads;
    return a;
  }
  if (t == "no_pyramid") {
    a.kind = AblationKind::NoPyramid;
    return a;
  }
  if (auto p = argument("mask")) {
    a.kind = AblationKind::Mask;
    a.mask_fraction = to_real("ablation", *p);
    if (!(a.mask_fraction >= 0.0 && a.mask_fraction < 1.0)) bad_value("ablation", text, "a mask fraction in [0, 1)");
    return a;
  }
  if (auto k = argument("proposals")) {
    a.kind = AblationKind::Proposals;
    a.proposals = to_index("ablation", *k);
    if (a.proposals < 1) bad_value("ablation", text, "a positive proposal count");
    return a;
  }
  bad_value("ablation", text, "none, independent_heads, no_pyramid, mask(p) or proposals(K)");
}

std::string to_string(const Ablation& a) {
  switch (a.kind) {
    case AblationKind::None: return "none";
    case AblationKind::IndependentHeads: return "independent_heads";
    case AblationKind::NoPyramid: return "no_pyramid";
    case AblationKind::Mask: return "mask(" + real_text(a.mask_fraction) + ")";
    case AblationKind::Proposals: return "proposals(" + std::to_string(a.proposals) + ")";
  }
  return "none";
}

ModelConfig effective_model(const ExperimentConfig& c) {
  ModelConfig m = c.model;
  switch (c.ablation.kind) {
    case AblationKind::None: break;
    case AblationKind::IndependentHeads: m.head_mode = HeadMode::Independent; break;
    case AblationKind::NoPyramid: m.pyramid = false; break;
    case AblationKind::Mask: m.mask_fraction = c.ablation.mask_fraction; break;
    case AblationKind::Proposals: m.proposals = c.ablation.proposals; break;
  }
  return m;
}

LrSchedule schedule_of(const ExperimentConfig& c) {
  LrSchedule s;
  s.base_lr = c.lr.base_lr;
  s.base_batch = c.lr.base_batch;
  s.warmup_iters = c.lr.warmup_iters;
  s.scaling = c.lr.scaling;
  s.decay = c.lr.decay;
  s.milestones = c.lr.milestones;
  s.factor = c.lr.factor;
  s.power = c.lr.power;
  s.total_iterations = c.total_iterations;
  return s;
}

ModulatorConfig modulator_of(const ExperimentConfig& c) {
  ModulatorConfig m;
  m.tau = c.agvm.tau > 0 ? c.agvm.tau : (c.batch_size > 1024 ? 5 : 10);
  m.alpha = c.agvm.alpha;
  m.clip_lo = c.agvm.clip_lo;
  m.clip_hi = c.agvm.clip_hi;
  m.eps_ratio = c.agvm.eps_ratio;
  return m;
}

std::uint64_t dataset_seed(const ExperimentConfig& c) {
  return c.dataset.seed ? *c.dataset.seed : derive_seed(c.seed, {0xda7a});
}

void validate(const ExperimentConfig& c) {
  auto fail = [](const std::string& what) { throw std::invalid_argument("invalid experiment config: " + what); };
  validate(effective_model(c));
  if (c.dataset.n < 2) fail("dataset.n must be at least 2");
  if (!(c.dataset.noise_std >= 0.0)) fail("dataset.noise_std must be non-negative");
  if (c.batch_size < 2 || c.batch_size % 2 != 0) fail("batch_size must be even and positive");
  if (c.batch_size > c.dataset.n) fail("batch_size must not exceed dataset.n");
  if (c.total_iterations < 0) fail("total_iterations must be non-negative");
  if (c.agvm.tau < 0) fail("agvm.tau must be positive or auto");
  validate(schedule_of(c));
  validate(modulator_of(c));
  if (!(c.optimizer.beta1 >= 0.0 && c.optimizer.beta1 < 1.0)) fail("optimizer.beta1 must lie in [0, 1)");
  if (!(c.optimizer.beta2 >= 0.0 && c.optimizer.beta2 < 1.0)) fail("optimizer.beta2 must lie in [0, 1)");
  if (!(c.optimizer.eps > 0.0)) fail("optimizer.eps must be positive");
}

void set_key(ExperimentConfig& config, const std::string& key, const std::string& value) {
  find_entry(key).set(config, trim(value));
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& e : entries()) out.emplace_back(e.key);
  return out;
}

ExperimentConfig parse_config(std::istream& in, ExperimentConfig base) {
  std::string line;
  std::set<std::string> seen;
  for (int number = 1; std::getline(in, line); ++number) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const auto where = "line " + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw std::invalid_argument(where + "duplicate key '" + key + "'");
    try {
      set_key(base, key, line.substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::string& path, ExperimentConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file '" + path + "'");
  try {
    return parse_config(in, std::move(base));
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
}

void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& args) {
  for (const auto& arg : args) {
    const auto eq = arg.find('=');
    if (arg.rfind("--", 0) != 0 || eq == std::string::npos || eq == 2)
      throw std::invalid_argument("unexpected argument '" + arg + "', overrides take the form --key=value");
    set_key(config, arg.substr(2, eq - 2), arg.substr(eq + 1));
  }
}

void apply_seed_env(ExperimentConfig& config) {
  if (const char* env = std::getenv("AGVM_SEED"); env != nullptr && *env != '\0') config.seed = to_u64("AGVM_SEED", env);
}

std::string format_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& e : entries()) out += std::string(e.key) + " = " + e.get(config) + "\n";
  return out;
}

}  // namespace agvm
