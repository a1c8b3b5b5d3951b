#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

namespace nvf {

using Eigen::MatrixXd;
using Eigen::Vector3d;
using Eigen::VectorXd;

/// Rows are points, columns are coordinates.
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

inline int& thread_count_ref() {
  static int n = static_cast<int>(std::thread::hardware_concurrency());
  return n;
}

inline void set_thread_count(int n) {
  thread_count_ref() = n > 0 ? n : 1;
}

inline int thread_count() {
  int n = thread_count_ref();
  return n > 0 ? n : 1;
}

// Static block partition; each worker owns a disjoint index range, so the
// result never depends on the schedule.
inline void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
  const int workers = thread_count();
  if (workers <= 1 || n < 2) {
    body(0, n);
    return;
  }
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  for (std::int64_t lo = 0; lo < n; lo += chunk) {
    const std::int64_t hi = std::min(n, lo + chunk);
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

// FNV-1a, used for input fingerprints in run manifests.
inline std::uint64_t fnv1a(const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace nvf
