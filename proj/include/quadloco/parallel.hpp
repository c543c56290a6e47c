#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace quadloco {

// Minimal persistent thread pool. Work is handed out as fixed-size index
// chunks; chunk boundaries are independent of the worker count, so any
// result that is reduced in chunk order is bit-reproducible regardless of
// how many workers run.
class ThreadPool {
  struct Job {
    std::function<void(long, long, long)> fn;
    long n = 0, chunk = 1, nchunks = 0;
    std::atomic<long> next{0};
    std::atomic<long> done{0};
    void run() {
      for (;;) {
        long c = next.fetch_add(1);
        if (c >= nchunks) break;
        fn(c * chunk, std::min(n, (c + 1) * chunk), c);
        done.fetch_add(1);
      }
    }
  };

 public:
  explicit ThreadPool(int workers = 0) {
    if (workers <= 0)
      workers = static_cast<int>(std::thread::hardware_concurrency());
    if (workers < 1) workers = 1;
    size_ = workers;
    for (int i = 1; i < workers; ++i)
      threads_.emplace_back([this] { worker_loop(); });
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int size() const { return size_; }

  // fn(begin, end, chunk_index) over [0, n) split into ceil(n/chunk) chunks.
  void for_chunks(long n, long chunk,
                  std::function<void(long, long, long)> fn) {
    if (n <= 0) return;
    auto job = std::make_shared<Job>();
    job->fn = std::move(fn);
    job->n = n;
    job->chunk = std::max<long>(1, chunk);
    job->nchunks = (n + job->chunk - 1) / job->chunk;
    if (job->nchunks == 1 || threads_.empty()) {
      job->run();
      return;
    }
    {
      std::lock_guard<std::mutex> lk(mu_);
      job_ = job;
      job_gen_++;
    }
    cv_.notify_all();
    job->run();
    while (job->done.load(std::memory_order_acquire) < job->nchunks)
      std::this_thread::yield();
  }

 private:
  void worker_loop() {
    std::uint64_t seen = 0;
    for (;;) {
      std::shared_ptr<Job> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || (job_ && job_gen_ != seen); });
        if (stop_) return;
        seen = job_gen_;
        job = job_;
      }
      if (job) job->run();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::shared_ptr<Job> job_;
  std::uint64_t job_gen_ = 0;
  bool stop_ = false;
  int size_ = 1;
};

}  // namespace quadloco
