#include "irtnet/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <string>

namespace irtnet {

ThreadPool::ThreadPool(std::size_t threads) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  for (std::size_t i = 1; i < threads; ++i) workers_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  work_ready_.notify_all();
  for (auto& t : workers_) t.join();
}

void ThreadPool::run(std::size_t count, const std::function<void(std::size_t)>& fn) {
  if (workers_.empty()) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::unique_lock lock(mutex_);
  job_ = &fn;
  job_count_ = count;
  next_index_ = 0;
  active_ = workers_.size();
  ++generation_;
  work_ready_.notify_all();

  // The calling thread takes indices too.
  while (next_index_ < job_count_) {
    const std::size_t i = next_index_++;
    lock.unlock();
    fn(i);
    lock.lock();
  }
  work_done_.wait(lock, [this] { return active_ == 0; });
  job_ = nullptr;
}

void ThreadPool::worker_loop() {
  std::size_t seen = 0;
  std::unique_lock lock(mutex_);
  for (;;) {
    work_ready_.wait(lock, [&] { return stopping_ || generation_ != seen; });
    if (stopping_) return;
    seen = generation_;
    while (next_index_ < job_count_) {
      const std::size_t i = next_index_++;
      lock.unlock();
      (*job_)(i);
      lock.lock();
    }
    if (--active_ == 0) work_done_.notify_all();
  }
}

std::size_t threads_from_env() {
  const char* value = std::getenv("IRTNET_THREADS");
  if (value == nullptr || *value == '\0') return 0;
  try {
    return static_cast<std::size_t>(std::stoul(value));
  } catch (const std::exception&) {
    return 0;
  }
}

}  // namespace irtnet
