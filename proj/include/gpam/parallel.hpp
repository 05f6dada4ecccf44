#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace gpam {

// Worker count: FORGE_THREADS caps it, default = hardware concurrency.
inline int worker_count() {
  static const int n = [] {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    if (const char* env = std::getenv("FORGE_THREADS")) {
      const int cap = std::atoi(env);
      if (cap > 0) hw = cap;
    }
    return hw;
  }();
  return n;
}

// Persistent pool executing [lo,hi) range bodies. Each index is processed by
// exactly one worker, so results are bitwise deterministic regardless of
// thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool(worker_count());
    return pool;
  }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    if (n <= 0) return;
    const int workers = int(std::min<int64_t>(int64_t(threads_.size()) + 1, n));
    if (workers <= 1 || inside_pool()) {
      body(0, n);
      return;
    }
    std::unique_lock<std::mutex> guard(run_mutex_);
    body_ = &body;
    total_ = n;
    chunk_ = (n + workers - 1) / workers;
    pending_.store(workers - 1, std::memory_order_release);
    {
      std::lock_guard<std::mutex> lk(mutex_);
      next_part_ = 1;
      parts_ = workers;
      ++generation_;
    }
    cv_.notify_all();
    // This thread takes part 0.
    body(0, std::min<int64_t>(chunk_, n));
    while (pending_.load(std::memory_order_acquire) != 0)
      std::this_thread::yield();
    body_ = nullptr;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  explicit ThreadPool(int workers) {
    for (int i = 1; i < workers; ++i)
      threads_.emplace_back([this] { worker_loop(); });
  }

  static bool& inside_pool() {
    thread_local bool flag = false;
    return flag;
  }

  void worker_loop() {
    inside_pool() = true;
    uint64_t seen = 0;
    for (;;) {
      int part;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [&] { return stop_ || (generation_ != seen && next_part_ < parts_); });
        if (stop_) return;
        seen = generation_;
        part = next_part_++;
        if (part >= parts_) continue;
      }
      const int64_t lo = int64_t(part) * chunk_;
      const int64_t hi = std::min<int64_t>(total_, lo + chunk_);
      if (lo < hi) (*body_)(lo, hi);
      pending_.fetch_sub(1, std::memory_order_release);
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mutex_, run_mutex_;
  std::condition_variable cv_;
  const std::function<void(int64_t, int64_t)>* body_ = nullptr;
  int64_t total_ = 0, chunk_ = 0;
  int next_part_ = 0, parts_ = 0;
  uint64_t generation_ = 0;
  std::atomic<int> pending_{0};
  bool stop_ = false;
};

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  ThreadPool::instance().run(n, body);
}

}  // namespace gpam
