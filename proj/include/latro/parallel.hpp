#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace latro {

inline int hardware_threads() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Runs fn(i) for i in [0, n). Work is handed out as fixed-size index blocks
// through a shared counter, so each index is processed exactly once and any
// index-addressed output slot is scheduling-independent. Callers that reduce
// must do so over index-ordered slots, never in completion order.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  if (n == 0) return;
  threads = std::max(1, threads);
  if (threads == 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  constexpr std::size_t kBlock = 16;
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr err;

  auto worker = [&] {
    for (;;) {
      std::size_t begin, end;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (err || next >= n) return;
        begin = next;
        end = std::min(n, begin + kBlock);
        next = end;
      }
      try {
        for (std::size_t i = begin; i < end; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  int spawn = std::min<std::size_t>(threads, n);
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace latro
