#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace cloudmask {

// Intra-op worker cap. CLOUDMASK_THREADS in the environment wins; the
// default is serial so results never depend on the machine it ran on.
inline int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("CLOUDMASK_THREADS")) {
      int n = std::atoi(env);
      if (n >= 1) return n;
    }
    return 1;
  }();
  return cached;
}

// Runs fn(i) for i in [0, count). Work items must write to disjoint outputs;
// there is no parallel reduction here, so the result is bit-identical for
// any thread count.
inline void parallel_for(std::int64_t count, const std::function<void(std::int64_t)>& fn) {
  const int threads = static_cast<int>(std::min<std::int64_t>(max_threads(), count));
  if (threads <= 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      for (std::int64_t i = t; i < count; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace cloudmask
