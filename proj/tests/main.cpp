#include "agvm/allocator.hpp"

#include <gtest/gtest.h>

int main(int argc, char** argv) {
  agvm::keep_large_allocations_on_heap();
  ::testing::InitGoogleTest(&argc, argv);
  return RUN_ALL_TESTS();
}
