#include "ilnet/threading.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace ilnet {
namespace {

int read_thread_cap() {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  int cap = static_cast<int>(std::min(hw, 4u));
  if (const char* env = std::getenv("ILNET_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) cap = std::min(v, static_cast<int>(std::max(hw, 1u) * 4));
  }
  return cap;
}

void mark_worker_thread();

// Minimal persistent pool: one chunked range task at a time, caller blocks
// until all workers finish their chunk.
class Pool {
 public:
  explicit Pool(int workers) : workers_(workers) {
    threads_.reserve(workers);
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this, i] { run(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void dispatch(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    std::unique_lock<std::mutex> lk(mu_);
    fn_ = &fn;
    n_ = n;
    pending_ = workers_;
    ++epoch_;
    cv_.notify_all();
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

  int workers() const { return workers_; }

 private:
  void run(int idx) {
    mark_worker_thread();
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn;
      int64_t n;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
        if (stop_) return;
        seen = epoch_;
        fn = fn_;
        n = n_;
      }
      if (fn) {
        int64_t chunk = (n + workers_ - 1) / workers_;
        int64_t lo = std::min<int64_t>(n, idx * chunk);
        int64_t hi = std::min<int64_t>(n, lo + chunk);
        if (lo < hi) (*fn)(lo, hi);
      }
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int64_t, int64_t)>* fn_ = nullptr;
  int64_t n_ = 0;
  int pending_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

Pool* pool() {
  static Pool p(read_thread_cap());
  return &p;
}

thread_local bool in_parallel_region = false;

void mark_worker_thread() { in_parallel_region = true; }

}  // namespace

int max_threads() {
  static int cap = read_thread_cap();
  return cap;
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  // nested calls and tiny ranges run inline
  if (in_parallel_region || max_threads() <= 1 || n == 1) {
    fn(0, n);
    return;
  }
  in_parallel_region = true;
  pool()->dispatch(n, fn);
  in_parallel_region = false;
}

}  // namespace ilnet
