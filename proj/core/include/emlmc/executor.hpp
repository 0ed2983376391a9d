#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace emlmc {

/// Fixed-size worker pool for independent index ranges. Results must be
/// written to per-index slots; callers reduce them in index order so the
/// outcome never depends on the worker count.
class Executor {
 public:
  explicit Executor(unsigned workers = 1) : workers_(std::max(1u, workers)) {}

  unsigned workers() const noexcept { return workers_; }

  template <class Task>
  void for_each_index(std::size_t count, Task&& task) const {
    if (count == 0) return;
    const unsigned n_threads =
        static_cast<unsigned>(std::min<std::size_t>(workers_, count));
    if (n_threads == 1) {
      for (std::size_t i = 0; i < count; ++i) task(i);
      return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto worker = [&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          next = count;
        }
      }
    };
    {
      std::vector<std::jthread> threads;
      threads.reserve(n_threads);
      for (unsigned t = 0; t < n_threads; ++t) threads.emplace_back(worker);
    }
    if (failure) std::rethrow_exception(failure);
  }

 private:
  unsigned workers_;
};

}  // namespace emlmc
