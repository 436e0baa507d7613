#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace ntklab {

/// Worker cap from NTKLAB_THREADS; defaults to the hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("NTKLAB_THREADS"); env != nullptr && *env != '\0') {
    try {
      const long v = std::stol(env);
      if (v >= 1) return static_cast<std::size_t>(v);
    } catch (const std::exception&) {
    }
    return 1;
  }
  return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [begin, end) over contiguous chunks.
///
/// Each index is processed by exactly one thread, so as long as fn(i) only
/// writes state owned by i the result does not depend on the worker count.
template <typename Fn>
void parallel_for(std::size_t begin, std::size_t end, Fn&& fn, std::size_t min_chunk = 1) {
  if (end <= begin) return;
  const std::size_t total = end - begin;
  const std::size_t workers =
      std::min(worker_count(), std::max<std::size_t>(1, total / std::max<std::size_t>(1, min_chunk)));
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (total + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace ntklab
