#pragma once

// Versioned text checkpoints for the optimizers. Reals are written as
// hexadecimal floating point, so a save/load round trip is bit-exact.

#include "agvm/optimizer.hpp"

#include <iosfwd>
#include <string>

namespace agvm {

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(std::ostream& out, const AgvmSgd& optimizer);
void save_checkpoint(std::ostream& out, const AgvmAdamW& optimizer);

/// Rebuilds an optimizer (config, step, buffers, mu) from a checkpoint. The
/// partition must match the one recorded in the file.
AgvmSgd load_sgd_checkpoint(std::istream& in, const ModulePartition& partition);
AgvmAdamW load_adamw_checkpoint(std::istream& in, const ModulePartition& partition);

std::string format_hex(double value);
double parse_hex(const std::string& text);

}  // namespace agvm
