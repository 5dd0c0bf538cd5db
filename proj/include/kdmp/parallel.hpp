#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace kdmp {

// Shared worker pool. parallel_for partitions [0, n) into contiguous ranges;
// every index is touched by exactly one worker and no worker writes outside
// its range, so results are independent of the thread count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void set_num_threads(int n) {
    std::lock_guard<std::mutex> guard(api_mutex_);
    stop_workers();
    num_threads_ = n < 1 ? 1 : n;
    start_workers();
  }

  int num_threads() const { return num_threads_; }

  void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    // Nested calls (a pool task using parallel_for itself) run inline: the
    // pool is single-level, and re-entering run() would deadlock on the api
    // mutex while the outer call waits for its stragglers.
    if (nested_flag() || num_threads_ == 1 || n == 1) {
      body(0, n);
      return;
    }
    std::lock_guard<std::mutex> guard(api_mutex_);
    std::size_t parts = std::min<std::size_t>(num_threads_, n);
    std::size_t chunk = (n + parts - 1) / parts;
    pending_.store(static_cast<int>(parts) - 1, std::memory_order_release);
    {
      std::lock_guard<std::mutex> lk(queue_mutex_);
      tasks_.clear();
      for (std::size_t p = 1; p < parts; ++p) {
        std::size_t lo = p * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) {
          pending_.fetch_sub(1, std::memory_order_acq_rel);
          continue;
        }
        tasks_.push_back([&body, lo, hi] { body(lo, hi); });
      }
    }
    wake_.notify_all();
    {
      NestedGuard nested;
      body(0, std::min(n, chunk));
      // help drain the queue, then wait for stragglers
      for (;;) {
        std::function<void()> task;
        {
          std::lock_guard<std::mutex> lk(queue_mutex_);
          if (!tasks_.empty()) {
            task = std::move(tasks_.back());
            tasks_.pop_back();
          }
        }
        if (!task) break;
        task();
        pending_.fetch_sub(1, std::memory_order_acq_rel);
      }
    }
    std::unique_lock<std::mutex> lk(done_mutex_);
    done_.wait(lk, [this] { return pending_.load(std::memory_order_acquire) <= 0; });
  }

 private:
  ThreadPool() {
    num_threads_ = static_cast<int>(std::thread::hardware_concurrency());
    if (num_threads_ < 1) num_threads_ = 1;
    start_workers();
  }

  ~ThreadPool() { stop_workers(); }

  void start_workers() {
    if (num_threads_ <= 1) return;
    stopping_ = false;
    for (int i = 0; i + 1 < num_threads_; ++i) {
      workers_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(queue_mutex_);
      stopping_ = true;
    }
    wake_.notify_all();
    for (auto& w : workers_) w.join();
    workers_.clear();
  }

  void worker_loop() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(queue_mutex_);
        wake_.wait(lk, [this] { return stopping_ || !tasks_.empty(); });
        if (stopping_) return;
        task = std::move(tasks_.back());
        tasks_.pop_back();
      }
      {
        NestedGuard nested;
        task();
      }
      if (pending_.fetch_sub(1, std::memory_order_acq_rel) == 1) {
        std::lock_guard<std::mutex> lk(done_mutex_);
        done_.notify_all();
      }
    }
  }

  static bool& nested_flag() {
    static thread_local bool inside = false;
    return inside;
  }

  struct NestedGuard {
    NestedGuard() { nested_flag() = true; }
    ~NestedGuard() { nested_flag() = false; }
  };

  int num_threads_ = 1;
  bool stopping_ = false;
  std::vector<std::thread> workers_;
  std::vector<std::function<void()>> tasks_;
  std::mutex api_mutex_;
  std::mutex queue_mutex_;
  std::mutex done_mutex_;
  std::condition_variable wake_;
  std::condition_variable done_;
  std::atomic<int> pending_{0};
};

inline void set_num_threads(int n) { ThreadPool::instance().set_num_threads(n); }
inline int num_threads() { return ThreadPool::instance().num_threads(); }

template <typename Body>
inline void parallel_for(std::size_t n, Body&& body) {
  ThreadPool::instance().run(n, std::function<void(std::size_t, std::size_t)>(
                                    [&body](std::size_t lo, std::size_t hi) { body(lo, hi); }));
}

}  // namespace kdmp
