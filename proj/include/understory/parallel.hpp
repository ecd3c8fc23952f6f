// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace understory {

inline int default_thread_count() {
  const unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

/// Splits [0, count) into `workers` contiguous chunks and runs
/// fn(worker, begin, end) for each. Chunk boundaries depend only on
/// (count, workers), so per-worker results reduced in worker order are
/// reproducible for a fixed worker count.
template <class Fn>
void parallel_chunks(std::size_t count, int workers, Fn&& fn) {
  workers = std::max(1, workers);
  if (count == 0) return;
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(workers), count);
  auto begin_of = [&](std::size_t w) { return count * w / n; };
  if (n == 1) {
    fn(0, std::size_t{0}, count);
    return;
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(n);
  threads.reserve(n - 1);
  for (std::size_t w = 1; w < n; ++w) {
    threads.emplace_back([&, w] {
      try {
        fn(static_cast<int>(w), begin_of(w), begin_of(w + 1));
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  try {
    fn(0, begin_of(0), begin_of(1));
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// Number of chunks parallel_chunks will actually use.
inline int effective_workers(std::size_t count, int workers) {
  return static_cast<int>(std::max<std::size_t>(1, std::min<std::size_t>(std::max(1, workers), count)));
}

}  // namespace understory
