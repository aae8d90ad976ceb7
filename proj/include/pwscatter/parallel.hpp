#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace pwscatter {

namespace detail {
inline thread_local bool in_worker = false;
}

// Bounded set of workers for independent index tasks. Each task writes its own result slot,
// so outputs never depend on scheduling. Calls made from inside a task run inline.
class WorkerPool {
 public:
  explicit WorkerPool(unsigned workers = 1) : workers_(std::max(1u, workers)) {}

  unsigned workers() const { return workers_; }

  template <class Fn>
  void parallel_for(std::size_t n, Fn&& fn) const {
    if (n == 0) return;
    const unsigned w = detail::in_worker ? 1u : unsigned(std::min<std::size_t>(workers_, n));
    if (w <= 1) {
      for (std::size_t i = 0; i < n; ++i) fn(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto body = [&] {
      detail::in_worker = true;
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
      detail::in_worker = false;
    };
    std::vector<std::thread> pool;
    pool.reserve(w - 1);
    for (unsigned k = 1; k < w; ++k) pool.emplace_back(body);
    body();
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }

 private:
  unsigned workers_;
};

// Worker count from PWSCATTER_WORKERS, falling back to the hardware count.
inline unsigned default_workers() {
  if (const char* e = std::getenv("PWSCATTER_WORKERS")) {
    char* end = nullptr;
    const long n = std::strtol(e, &end, 10);
    if (end != e && *end == '\0' && n > 0) return unsigned(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

}  // namespace pwscatter
