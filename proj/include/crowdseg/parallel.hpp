#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace crowdseg {

/// Runs fn(0..n-1) across up to `workers` threads in contiguous index blocks.
/// Callers write results into index-addressed slots, so the outcome is
/// independent of scheduling. The first exception thrown by any worker is
/// rethrown on the calling thread after all workers join.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int w = std::min(workers, n);
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(w));
  threads.reserve(std::size_t(w));
  for (int t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      const int lo = int(std::int64_t(n) * t / w);
      const int hi = int(std::int64_t(n) * (t + 1) / w);
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        errors[std::size_t(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace crowdseg
