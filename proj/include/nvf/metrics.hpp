#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "nvf/common.hpp"

namespace nvf {

/// Symmetric mean-of-squared-nearest-neighbor Chamfer distance.
inline double chamfer(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() < 1 || b.rows() < 1) throw std::invalid_argument("chamfer: empty cloud");
  double ab = 0.0, ba = 0.0;
  std::vector<double> min_ba(static_cast<std::size_t>(b.rows()), std::numeric_limits<double>::infinity());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      const double d2 = (a.row(i) - b.row(j)).squaredNorm();
      best = std::min(best, d2);
      min_ba[static_cast<std::size_t>(j)] = std::min(min_ba[static_cast<std::size_t>(j)], d2);
    }
    ab += best;
  }
  for (double d2 : min_ba) ba += d2;
  return ab / static_cast<double>(a.rows()) + ba / static_cast<double>(b.rows());
}

/// Gradient of chamfer(a, b) with respect to a (b fixed). Subgradient at ties.
inline PointMatrix chamfer_grad(const PointMatrix& a, const PointMatrix& b) {
  const Eigen::Index m = a.rows(), n = b.rows();
  PointMatrix grad = PointMatrix::Zero(m, 3);
  for (Eigen::Index i = 0; i < m; ++i) {
    Eigen::Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
      const double d2 = (a.row(i) - b.row(j)).squaredNorm();
      if (d2 < bd) {
        bd = d2;
        best = j;
      }
    }
    grad.row(i) += (2.0 / static_cast<double>(m)) * (a.row(i) - b.row(best));
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::Index best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < m; ++i) {
      const double d2 = (a.row(i) - b.row(j)).squaredNorm();
      if (d2 < bd) {
        bd = d2;
        best = i;
      }
    }
    grad.row(best) += (2.0 / static_cast<double>(n)) * (a.row(best) - b.row(j));
  }
  return grad;
}

struct TransportPlan {
  std::vector<int> assignment;  // row i of a matched to assignment[i] of b
  double cost = 0.0;
};

namespace detail {

// Shortest-augmenting-path solver for the dense linear assignment problem
// (Jonker-Volgenant flavour with row/column potentials), O(n^3).
inline std::vector<int> solve_assignment(const MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0), v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<std::size_t>(n) + 1, 0);  // col -> row, 1-based, 0 = free
  std::vector<int> way(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = -1;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n));
  for (int j = 1; j <= n; ++j) row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
  return row_to_col;
}

}  // namespace detail

/// Minimum-cost perfect matching under Euclidean ground cost, balanced clouds only.
inline TransportPlan emd_exact(const PointMatrix& a, const PointMatrix& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("emd_exact: clouds must have equal point counts");
  if (a.rows() < 1) throw std::invalid_argument("emd_exact: empty cloud");
  if (a.rows() > 4096) throw std::invalid_argument("emd_exact: cloud too large for exact assignment");
  const Eigen::Index n = a.rows();
  MatrixXd cost(n, n);
  parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t i = lo; i < hi; ++i)
      for (Eigen::Index j = 0; j < n; ++j) cost(i, j) = (a.row(i) - b.row(j)).norm();
  });
  TransportPlan plan;
  plan.assignment = detail::solve_assignment(cost);
  for (Eigen::Index i = 0; i < n; ++i) plan.cost += cost(i, plan.assignment[static_cast<std::size_t>(i)]);
  return plan;
}

/// Envelope-theorem gradient of the EMD cost with respect to a: the optimal
/// assignment is treated as fixed.
inline PointMatrix emd_grad(const PointMatrix& a, const PointMatrix& b, const TransportPlan& plan) {
  PointMatrix grad = PointMatrix::Zero(a.rows(), 3);
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    Eigen::RowVector3d d = a.row(i) - b.row(plan.assignment[static_cast<std::size_t>(i)]);
    const double len = d.norm();
    if (len > 1e-12) grad.row(i) = d / len;
  }
  return grad;
}

}  // namespace nvf
