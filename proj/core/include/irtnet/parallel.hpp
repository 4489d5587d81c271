#pragma once

#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace irtnet {

/// Fixed-size worker pool running index-parallel loops. Callers that need
/// reproducible results must make each index write disjoint state; the pool
/// never reduces anything itself.
class ThreadPool {
 public:
  /// `threads` == 0 picks hardware concurrency. One thread runs inline.
  explicit ThreadPool(std::size_t threads = 0);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  std::size_t size() const noexcept { return workers_.size() + 1; }

  /// Runs fn(i) for i in [0, count) and blocks until all calls return.
  void run(std::size_t count, const std::function<void(std::size_t)>& fn);

 private:
  void worker_loop();

  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable work_ready_;
  std::condition_variable work_done_;
  const std::function<void(std::size_t)>* job_ = nullptr;
  std::size_t job_count_ = 0;
  std::size_t next_index_ = 0;
  std::size_t active_ = 0;
  std::size_t generation_ = 0;
  bool stopping_ = false;
};

/// Reads IRTNET_THREADS (0 or unset = auto).
std::size_t threads_from_env();

/// Sequential fallback when pool is null.
inline void parallel_for(ThreadPool* pool, std::size_t count,
                         const std::function<void(std::size_t)>& fn) {
  if (pool == nullptr || pool->size() == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  pool->run(count, fn);
}

}  // namespace irtnet
