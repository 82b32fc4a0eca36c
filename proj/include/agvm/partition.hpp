#pragma once

#include "agvm/autograd.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace agvm {

/// One named parameter tensor inside a flat parameter vector.
struct ParameterBlock {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  Index offset = 0;

  Index size() const { return rows * cols; }
};

/// A named network module: a contiguous run of parameter blocks.
struct Module {
  std::string name;
  std::vector<Index> blocks;
  Index offset = 0;
  Index size = 0;
};

/// Ordered set of modules covering a flat parameter vector exactly once,
/// with a designated anchor module whose modulation factor stays at 1.
class ModulePartition {
 public:
  ModulePartition() = default;
  ModulePartition(std::vector<ParameterBlock> blocks, std::vector<Module> modules, Index anchor = 0);

  /// Single-block modules laid out back to back, one per (name, size) pair.
  static ModulePartition contiguous(const std::vector<std::pair<std::string, Index>>& sizes, Index anchor = 0);

  Index size() const { return static_cast<Index>(modules_.size()); }
  Index anchor() const { return anchor_; }
  Index parameter_count() const { return parameter_count_; }

  const Module& operator[](Index i) const { return modules_.at(static_cast<std::size_t>(i)); }
  const std::vector<Module>& modules() const { return modules_; }
  const std::vector<ParameterBlock>& blocks() const { return blocks_; }

  /// Index of the module with this name, or -1.
  Index find(std::string_view name) const;

  template <typename Derived>
  auto slice(Eigen::MatrixBase<Derived>& v, Index i) const {
    const Module& m = (*this)[i];
    return v.segment(m.offset, m.size);
  }
  template <typename Derived>
  auto slice(const Eigen::MatrixBase<Derived>& v, Index i) const {
    const Module& m = (*this)[i];
    return v.segment(m.offset, m.size);
  }

 private:
  std::vector<ParameterBlock> blocks_;
  std::vector<Module> modules_;
  Index anchor_ = 0;
  Index parameter_count_ = 0;
};

}  // namespace agvm
