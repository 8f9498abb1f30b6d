#pragma once

// Exact optimal transport for equal-size uniform point sets. With n = n′ and
// uniform weights the optimum is attained at a permutation, so OT reduces to
// a linear assignment problem. Used by tests and `koopcon selftest` only.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "koopcon/error.hpp"
#include "koopcon/losses.hpp"
#include "koopcon/tensor.hpp"

namespace koopcon::testing {

inline constexpr std::size_t kOracleMaxPoints = 10;

// Minimum-cost perfect matching on an n×n cost matrix (Hungarian method,
// potentials formulation). Returns assignment[row] = col.
inline std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[p[j] - 1] = j - 1;
  return assignment;
}

// min over permutations σ of (1/n)·Σ ||y_i − y′_σ(i)||².
inline double exact_ot_oracle(const Tensor& y, const Tensor& y_prime) {
  if (y.rank() != 2 || y_prime.rank() != 2 || y.dim(1) != y_prime.dim(1)) {
    throw DimensionError("exact_ot_oracle: " + shape_str(y.shape()) + " vs " + shape_str(y_prime.shape()));
  }
  const std::size_t n = y.dim(0);
  if (y_prime.dim(0) != n) {
    throw ContractError("exact_ot_oracle: needs n = n', got " + std::to_string(n) + " and " +
                        std::to_string(y_prime.dim(0)));
  }
  if (n > kOracleMaxPoints) {
    throw ContractError("exact_ot_oracle: n = " + std::to_string(n) + " exceeds oracle scope of " +
                        std::to_string(kOracleMaxPoints));
  }
  const std::vector<double> cost = squared_distances(y, y_prime);
  const auto assignment = hungarian(cost, n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += cost[i * n + assignment[i]];
  return total / static_cast<double>(n);
}

// Same quantity by enumerating every permutation; independent check on the assignment solver.
inline double brute_force_ot(const Tensor& y, const Tensor& y_prime) {
  const std::size_t n = y.dim(0);
  const std::vector<double> cost = squared_distances(y, y_prime);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += cost[i * n + perm[i]];
    best = std::min(best, total);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best / static_cast<double>(n);
}

}  // namespace koopcon::testing
