#pragma once

// Fixed-size worker pool. Tasks write into per-index slots and callers reduce
// the slots in index order, so results never depend on the thread count.

#include "agvm/autograd.hpp"

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace agvm {

class WorkerPool {
 public:
  /// `threads` <= 1 runs every task on the calling thread.
  explicit WorkerPool(std::size_t threads = 1);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  std::size_t threads() const { return workers_.size() + 1; }

  /// Calls task(i) for i in [0, count) and waits. The first exception thrown
  /// by any task is rethrown here.
  void run(Index count, const std::function<void(Index)>& task);

 private:
  void work();
  void drain();

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  const std::function<void(Index)>* task_ = nullptr;
  Index count_ = 0;
  Index next_ = 0;
  Index finished_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

}  // namespace agvm
