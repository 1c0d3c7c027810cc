#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lracv {

// Thread-count resolution: explicit request > LRACV_THREADS env > hardware.
inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("LRACV_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

// Static-partition parallel loop. Each index is visited exactly once, so
// bodies that write to disjoint slots produce identical results for any
// thread count; threads <= 1 runs inline (bitwise-reproducible path).
template <class F>
void parallel_for(Eigen::Index begin, Eigen::Index end, int threads, F&& f) {
  const Eigen::Index count = end - begin;
  if (count <= 0) return;
  if (threads > count) threads = static_cast<int>(count);
  if (threads <= 1) {
    for (Eigen::Index i = begin; i < end; ++i) f(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(threads);
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const Eigen::Index chunk = (count + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const Eigen::Index lo = begin + t * chunk;
    const Eigen::Index hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&, lo, hi] {
      try {
        for (Eigen::Index i = lo; i < hi; ++i) f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lracv
