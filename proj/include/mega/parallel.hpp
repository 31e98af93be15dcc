#pragma once

#include <atomic>
#include <condition_variable>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace mega {

/// Persistent worker pool. Work is expressed as a fixed set of chunks whose
/// partitioning never depends on the worker count, so callers that reduce
/// per-chunk results in chunk order get bit-identical output for any pool size.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void set_workers(int n) {
    std::lock_guard<std::mutex> outer(api_mutex_);
    stop_threads();
    workers_ = n < 1 ? 1 : n;
    start_threads();
  }

  int workers() const { return workers_; }

  /// Runs fn(chunk) for chunk in [0, n_chunks); the calling thread
  /// participates. Rethrows the first exception raised by any chunk.
  void run_chunks(int n_chunks, const std::function<void(int)>& fn) {
    if (n_chunks <= 0) return;
    std::lock_guard<std::mutex> outer(api_mutex_);
    if (workers_ <= 1 || n_chunks == 1) {
      for (int i = 0; i < n_chunks; ++i) fn(i);
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mutex_);
      job_fn_ = &fn;
      next_chunk_.store(0);
      pending_.store(n_chunks);
      total_chunks_ = n_chunks;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    work_loop();  // main thread joins in
    {
      std::unique_lock<std::mutex> lk(mutex_);
      done_cv_.wait(lk, [this] { return pending_.load() == 0; });
      job_fn_ = nullptr;
      if (error_) {
        auto err = error_;
        error_ = nullptr;
        std::rethrow_exception(err);
      }
    }
  }

  ~ThreadPool() { stop_threads(); }

 private:
  ThreadPool() : workers_(static_cast<int>(std::thread::hardware_concurrency())) {
    if (workers_ < 1) workers_ = 1;
    start_threads();
  }

  void start_threads() {
    shutdown_ = false;
    for (int i = 1; i < workers_; ++i) {
      threads_.emplace_back([this] {
        uint64_t seen = 0;
        while (true) {
          {
            std::unique_lock<std::mutex> lk(mutex_);
            cv_.wait(lk, [&] { return shutdown_ || (job_fn_ && generation_ != seen); });
            if (shutdown_) return;
            seen = generation_;
          }
          work_loop();
        }
      });
    }
  }

  void stop_threads() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      shutdown_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  void work_loop() {
    while (true) {
      const int chunk = next_chunk_.fetch_add(1);
      if (chunk >= total_chunks_) return;
      try {
        (*job_fn_)(chunk);
      } catch (...) {
        std::lock_guard<std::mutex> lk(mutex_);
        if (!error_) error_ = std::current_exception();
      }
      if (pending_.fetch_sub(1) == 1) {
        std::lock_guard<std::mutex> lk(mutex_);
        done_cv_.notify_all();
      }
    }
  }

  std::mutex api_mutex_;
  std::mutex mutex_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int)>* job_fn_ = nullptr;
  std::atomic<int> next_chunk_{0};
  std::atomic<int> pending_{0};
  int total_chunks_ = 0;
  uint64_t generation_ = 0;
  int workers_ = 1;
  bool shutdown_ = false;
  std::exception_ptr error_;
};

/// Splits [0, n) into fixed-size chunks (grain) and runs them on the pool.
inline void parallel_chunks(int n, int grain, const std::function<void(int, int)>& fn) {
  if (n <= 0) return;
  const int chunks = (n + grain - 1) / grain;
  ThreadPool::instance().run_chunks(chunks, [&](int c) {
    const int lo = c * grain;
    const int hi = std::min(n, lo + grain);
    fn(lo, hi);
  });
}

}  // namespace mega
