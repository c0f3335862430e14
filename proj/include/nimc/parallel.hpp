#pragma once

#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace nimc {

// Global worker cap, set once by the CLI (--threads). Numeric results must be
// identical for any cap, so all reductions below use fixed chunk boundaries
// and combine partials in chunk order.
inline int& thread_cap() {
  static int cap = static_cast<int>(std::thread::hardware_concurrency());
  return cap;
}

inline void set_thread_cap(int n) { thread_cap() = n < 1 ? 1 : n; }

namespace detail {
inline bool& inside_worker() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

// Runs fn(i) for i in [0, n); work items must be independent.
template <class Fn>
void parallel_for(std::ptrdiff_t n, Fn&& fn) {
  const int workers = detail::inside_worker() ? 1 : std::min<std::ptrdiff_t>(thread_cap(), n);
  if (workers <= 1) {
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::ptrdiff_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      detail::inside_worker() = true;
      for (std::ptrdiff_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

// Deterministic reduction over [0, n): the range is cut into chunks whose
// boundaries depend only on n, each chunk is accumulated sequentially by
// chunk_fn(begin, end, acc), and partials are combined in chunk order.
template <class Acc, class ChunkFn, class CombineFn>
Acc chunked_reduce(std::ptrdiff_t n, Acc init, ChunkFn&& chunk_fn, CombineFn&& combine,
                   std::ptrdiff_t chunk_size = 4096) {
  if (n <= 0) return init;
  const std::ptrdiff_t chunks = (n + chunk_size - 1) / chunk_size;
  std::vector<Acc> partial(chunks, init);
  parallel_for(chunks, [&](std::ptrdiff_t c) {
    const std::ptrdiff_t b = c * chunk_size;
    const std::ptrdiff_t e = std::min(n, b + chunk_size);
    chunk_fn(b, e, partial[c]);
  });
  Acc out = std::move(partial[0]);
  for (std::ptrdiff_t c = 1; c < chunks; ++c) combine(out, partial[c]);
  return out;
}

}  // namespace nimc
