#pragma once

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace blockunfold {

/// Work is always split into chunks of a fixed size, independent of the worker
/// count, so per-chunk floating point results never depend on threading.
inline constexpr Eigen::Index kChunkColumns = 64;

/// Calls fn(chunk_index, begin, count) for every chunk of [0, total).
/// Chunks are distributed over at most `threads` workers; callers store
/// per-chunk results and reduce them in chunk order.
template <class Fn>
void for_each_chunk(Eigen::Index total, int threads, Fn&& fn) {
  const Eigen::Index chunks = (total + kChunkColumns - 1) / kChunkColumns;
  auto run = [&](Eigen::Index c) {
    const Eigen::Index begin = c * kChunkColumns;
    fn(c, begin, std::min(kChunkColumns, total - begin));
  };
  const int workers = static_cast<int>(std::min<Eigen::Index>(std::max(threads, 1), chunks));
  if (workers <= 1) {
    for (Eigen::Index c = 0; c < chunks; ++c) run(c);
    return;
  }
  std::atomic<Eigen::Index> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (Eigen::Index c = next++; c < chunks; c = next++) run(c);
    });
  }
  for (auto& t : pool) t.join();
}

inline Eigen::Index chunk_count(Eigen::Index total) {
  return (total + kChunkColumns - 1) / kChunkColumns;
}

}  // namespace blockunfold
