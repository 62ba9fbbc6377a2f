#pragma once

#include <atomic>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace uncseg {

// Fan-out cap from UNCSEG_THREADS; defaults to 1 (fully serial).
inline int thread_cap() {
  const char* env = std::getenv("UNCSEG_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  return n < 1 ? 1 : n;
}

// Runs fn(i) for i in [0, n). Work items must be independent; results
// must not depend on scheduling for outputs to stay deterministic.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(thread_cap(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (std::thread& t : pool) t.join();
}

}  // namespace uncseg
