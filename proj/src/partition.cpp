#include "agvm/partition.hpp"

#include <stdexcept>

namespace agvm {

ModulePartition::ModulePartition(std::vector<ParameterBlock> blocks, std::vector<Module> modules, Index anchor)
    : blocks_(std::move(blocks)), modules_(std::move(modules)), anchor_(anchor) {
  if (modules_.empty()) throw std::invalid_argument("ModulePartition: at least one module is required");
  if (anchor_ < 0 || anchor_ >= size())
    throw std::invalid_argument("ModulePartition: anchor index " + std::to_string(anchor_) + " out of range");

  Index expect_block = 0;
  Index offset = 0;
  for (auto& m : modules_) {
    if (find(m.name) != &m - modules_.data())
      throw std::invalid_argument("ModulePartition: duplicate module name '" + m.name + "'");
    if (m.blocks.empty()) throw std::invalid_argument("ModulePartition: module '" + m.name + "' has no parameters");
    m.offset = offset;
    m.size = 0;
    for (Index b : m.blocks) {
      if (b != expect_block)
        throw std::invalid_argument("ModulePartition: blocks must be assigned to modules in order, exactly once");
      auto& blk = blocks_.at(static_cast<std::size_t>(b));
      if (blk.offset != offset) throw std::invalid_argument("ModulePartition: block '" + blk.name + "' is not contiguous");
      offset += blk.size();
      m.size += blk.size();
      ++expect_block;
    }
  }
  if (expect_block != static_cast<Index>(blocks_.size()))
    throw std::invalid_argument("ModulePartition: some parameter blocks belong to no module");
  parameter_count_ = offset;
}

ModulePartition ModulePartition::contiguous(const std::vector<std::pair<std::string, Index>>& sizes, Index anchor) {
  std::vector<ParameterBlock> blocks;
  std::vector<Module> modules;
  Index offset = 0;
  for (const auto& [name, n] : sizes) {
    blocks.push_back({name, 1, n, offset});
    modules.push_back({name, {static_cast<Index>(blocks.size()) - 1}, 0, 0});
    offset += n;
  }
  return ModulePartition(std::move(blocks), std::move(modules), anchor);
}

Index ModulePartition::find(std::string_view name) const {
  for (std::size_t i = 0; i < modules_.size(); ++i)
    if (modules_[i].name == name) return static_cast<Index>(i);
  return -1;
}

}  // namespace agvm
