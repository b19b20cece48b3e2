#pragma once

#include <cstdlib>
#include <thread>
#include <vector>

namespace flowfactor {

/// Worker count for row-parallel grid evaluation, taken once from the
/// FLOWFACTOR_THREADS environment variable. Defaults to 1 (sequential).
inline int thread_count() {
  static const int n = [] {
    if (const char* s = std::getenv("FLOWFACTOR_THREADS")) {
      const int v = std::atoi(s);
      if (v > 0) return v;
    }
    return 1;
  }();
  return n;
}

/// Runs fn(y) for every row. Each row writes disjoint pixels, so the result
/// is identical for any worker count.
template <typename Fn>
void parallel_rows(int height, Fn&& fn) {
  const int workers = std::min(thread_count(), height);
  if (workers <= 1) {
    for (int y = 0; y < height; ++y) fn(y);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&fn, w, workers, height] {
      for (int y = w; y < height; y += workers) fn(y);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace flowfactor
