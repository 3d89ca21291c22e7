#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace crossflux {

/// Assembly thread budget, capped by CROSSFLUX_THREADS (default 1).
inline int assembly_threads() {
  static const int n = [] {
    const char* env = std::getenv("CROSSFLUX_THREADS");
    if (!env) return 1;
    const int v = std::atoi(env);
    const int hw = static_cast<int>(std::thread::hardware_concurrency());
    return std::clamp(v, 1, hw > 0 ? hw : 1);
  }();
  return n;
}

/// Runs fn(begin, end) over a partition of [0, n). Chunks are fixed by the
/// thread count, so per-slot outputs are placed identically regardless of
/// scheduling.
template <typename Fn>
void parallel_for(int n, Fn&& fn) {
  const int nthreads = std::min(assembly_threads(), std::max(1, n));
  if (nthreads <= 1 || n < 512) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  const int chunk = (n + nthreads - 1) / nthreads;
  for (int t = 0; t < nthreads; ++t) {
    const int b = t * chunk;
    const int e = std::min(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace crossflux
