#pragma once

#include <atomic>
#include <thread>
#include <vector>

namespace hybridckf {

// Runs fn(0..n-1) on up to `jobs` threads. Callers are responsible for
// catching exceptions inside fn; results must go into pre-sized slots so the
// outcome is independent of scheduling.
template <class Fn>
inline void parallel_for(int n, int jobs, Fn&& fn) {
  if (n <= 0) return;
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs <= 1 || n == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  const int workers = jobs < n ? jobs : n;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace hybridckf
