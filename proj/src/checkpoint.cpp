#include "agvm/checkpoint.hpp"

#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace agvm {

std::string format_hex(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::hex);
  if (res.ec != std::errc()) throw std::runtime_error("checkpoint: cannot format value");
  return std::string(buf, res.ptr);
}

double parse_hex(const std::string& text) {
  double value = 0.0;
  const char* first = text.data();
  const char* last = first + text.size();
  if (first != last && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value, std::chars_format::hex);
  if (res.ec != std::errc() || res.ptr != last) throw std::runtime_error("checkpoint: malformed number '" + text + "'");
  return value;
}

namespace {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void header(const char* kind, const ModulePartition& partition, Index steps) {
    out_ << "agvm-checkpoint " << kCheckpointVersion << '\n';
    out_ << "optimizer " << kind << '\n';
    out_ << "steps " << steps << '\n';
    out_ << "anchor " << partition.anchor() << '\n';
    out_ << "modules " << partition.size() << '\n';
    for (const auto& m : partition.modules()) out_ << "module " << m.name << ' ' << m.size << '\n';
  }
  void real(const char* key, double v) { out_ << key << ' ' << format_hex(v) << '\n'; }
  void integer(const char* key, Index v) { out_ << key << ' ' << v << '\n'; }
  template <typename Range>
  void reals(const char* key, const Range& values) {
    out_ << key << ' ' << static_cast<Index>(values.size());
    for (double v : values) out_ << ' ' << format_hex(v);
    out_ << '\n';
  }
  void modulator(const Modulator& mod) {
    const auto& c = mod.config();
    integer("tau", c.tau);
    real("alpha", c.alpha);
    real("clip_lo", c.clip_lo);
    real("clip_hi", c.clip_hi);
    real("eps_ratio", c.eps_ratio);
    integer("modulation_enabled", mod.enabled() ? 1 : 0);
    reals("mu", mod.mu());
  }
  void end() {
    out_ << "end\n";
    if (!out_) throw std::runtime_error("checkpoint: write failed");
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::string word(const char* key) {
    expect(key);
    std::string w;
    if (!(in_ >> w)) fail(std::string("missing value for '") + key + "'");
    return w;
  }
  Index integer(const char* key) {
    expect(key);
    Index v = 0;
    if (!(in_ >> v)) fail(std::string("bad integer for '") + key + "'");
    return v;
  }
  double real(const char* key) { return parse_hex(word(key)); }
  std::vector<double> reals(const char* key) {
    const Index n = integer(key);
    if (n < 0) fail("negative length");
    std::vector<double> out(static_cast<std::size_t>(n));
    std::string tok;
    for (auto& v : out) {
      if (!(in_ >> tok)) fail(std::string("truncated array '") + key + "'");
      v = parse_hex(tok);
    }
    return out;
  }
  Vector<double> vector(const char* key) {
    const auto v = reals(key);
    return Eigen::Map<const Vector<double>>(v.data(), static_cast<Index>(v.size()));
  }

  Index header(const char* kind, const ModulePartition& partition) {
    if (integer("agvm-checkpoint") != kCheckpointVersion) fail("unsupported checkpoint version");
    if (word("optimizer") != kind) fail(std::string("not a ") + kind + " checkpoint");
    const Index steps = integer("steps");
    if (integer("anchor") != partition.anchor()) fail("anchor does not match the partition");
    if (integer("modules") != partition.size()) fail("module count does not match the partition");
    for (const auto& m : partition.modules()) {
      expect("module");
      std::string name;
      Index size = 0;
      in_ >> name >> size;
      if (name != m.name || size != m.size) fail("module '" + name + "' does not match the partition");
    }
    return steps;
  }

  ModulatorConfig modulator_config() {
    ModulatorConfig c;
    c.tau = integer("tau");
    c.alpha = real("alpha");
    c.clip_lo = real("clip_lo");
    c.clip_hi = real("clip_hi");
    c.eps_ratio = real("eps_ratio");
    return c;
  }

  void restore_modulator(Modulator& mod) {
    const bool enabled = integer("modulation_enabled") != 0;
    mod.restore(reals("mu"), enabled);
  }

  void end() { expect("end"); }

 private:
  void expect(const char* key) {
    std::string w;
    if (!(in_ >> w) || w != key) fail(std::string("expected '") + key + "'");
  }
  [[noreturn]] static void fail(const std::string& what) { throw std::runtime_error("checkpoint: " + what); }

  std::istream& in_;
};

}  // namespace

void save_checkpoint(std::ostream& out, const AgvmSgd& opt) {
  Writer w(out);
  w.header("sgd", opt.partition(), opt.steps());
  w.real("beta1", opt.config().beta1);
  w.real("weight_decay", opt.config().weight_decay);
  w.modulator(opt.modulator());
  w.reals("m", opt.momentum());
  w.end();
}

void save_checkpoint(std::ostream& out, const AgvmAdamW& opt) {
  Writer w(out);
  w.header("adamw", opt.partition(), opt.steps());
  w.real("beta1", opt.config().beta1);
  w.real("beta2", opt.config().beta2);
  w.real("eps", opt.config().eps);
  w.real("weight_decay", opt.config().weight_decay);
  w.modulator(opt.modulator());
  w.reals("m", opt.first_moment());
  w.reals("v", opt.second_moment());
  w.end();
}

AgvmSgd load_sgd_checkpoint(std::istream& in, const ModulePartition& partition) {
  Reader r(in);
  const Index steps = r.header("sgd", partition);
  SgdConfig cfg;
  cfg.beta1 = r.real("beta1");
  cfg.weight_decay = r.real("weight_decay");
  AgvmSgd opt(partition, cfg, r.modulator_config());
  r.restore_modulator(opt.modulator());
  opt.restore(steps, r.vector("m"));
  r.end();
  return opt;
}

AgvmAdamW load_adamw_checkpoint(std::istream& in, const ModulePartition& partition) {
  Reader r(in);
  const Index steps = r.header("adamw", partition);
  AdamWConfig cfg;
  cfg.beta1 = r.real("beta1");
  cfg.beta2 = r.real("beta2");
  cfg.eps = r.real("eps");
  cfg.weight_decay = r.real("weight_decay");
  AgvmAdamW opt(partition, cfg, r.modulator_config());
  r.restore_modulator(opt.modulator());
  auto m = r.vector("m");
  auto v = r.vector("v");
  opt.restore(steps, std::move(m), std::move(v));
  r.end();
  return opt;
}

}  // namespace agvm
