#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace wiper {

/// Upper bound on worker threads used by parallel_for (default 1).
void set_thread_limit(std::size_t n) noexcept;
std::size_t thread_limit() noexcept;

/// Calls fn(i) for i in [0, n). Work is split into contiguous chunks; each index
/// is handled by exactly one call, so results written per index do not depend on the split.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(thread_limit(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
}

}  // namespace wiper
