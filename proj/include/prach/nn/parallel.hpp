#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace prach::nn {

namespace detail {
inline int& thread_count_ref() {
  static int n = 0;  // 0 = use hardware concurrency
  return n;
}
}  // namespace detail

inline void set_num_threads(int n) { detail::thread_count_ref() = n; }

inline int num_threads() {
  const int n = detail::thread_count_ref();
  if (n > 0) return n;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Runs f(begin, end, chunk_index) over [0, n) split into fixed-size chunks.
/// The chunk grid depends only on (n, chunk), never on the thread count, so
/// any chunk-indexed reduction combined in index order is bit-reproducible
/// on any machine.
template <typename F>
void parallel_chunks(Eigen::Index n, Eigen::Index chunk, F&& f) {
  if (n <= 0) return;
  const Eigen::Index nchunks = (n + chunk - 1) / chunk;
  auto run = [&](Eigen::Index ci) {
    const Eigen::Index b = ci * chunk;
    f(b, std::min(b + chunk, n), ci);
  };
  const int threads = std::min<Eigen::Index>(num_threads(), nchunks);
  if (threads <= 1) {
    for (Eigen::Index ci = 0; ci < nchunks; ++ci) run(ci);
    return;
  }
  std::atomic<Eigen::Index> next{0};
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (Eigen::Index ci = next.fetch_add(1); ci < nchunks; ci = next.fetch_add(1)) run(ci);
    });
  for (auto& th : pool) th.join();
}

inline Eigen::Index num_chunks(Eigen::Index n, Eigen::Index chunk) {
  return n <= 0 ? 0 : (n + chunk - 1) / chunk;
}

}  // namespace prach::nn
