#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "koopcon/error.hpp"
#include "koopcon/ops.hpp"
#include "koopcon/tensor.hpp"

namespace koopcon {

// How sinkhorn_epsilon is read: as a multiple of the mean cost entry, or as is.
enum class EpsilonMode { relative, absolute };

struct LossWeights {
  double alpha0 = 1.0;   // reconstruction
  double alpha1 = 0.1;   // cross-entropy
  double alpha2 = 1.0;   // Wasserstein
  double alpha3 = 0.01;  // covariance
  double sinkhorn_epsilon = 0.05;
  EpsilonMode sinkhorn_epsilon_mode = EpsilonMode::relative;
  std::size_t sinkhorn_max_iters = 200;
  double sinkhorn_tolerance = 1e-6;

  void validate() const {
    const double alphas[] = {alpha0, alpha1, alpha2, alpha3};
    for (int i = 0; i < 4; ++i) {
      if (!(alphas[i] >= 0.0) || !std::isfinite(alphas[i])) {
        throw ConfigError("alpha" + std::to_string(i) + " must be a finite value >= 0");
      }
    }
    if (!(sinkhorn_epsilon > 0.0) || !std::isfinite(sinkhorn_epsilon)) {
      throw ConfigError("sinkhorn_epsilon must be > 0");
    }
    if (sinkhorn_max_iters == 0) throw ConfigError("sinkhorn_max_iters must be positive");
    if (!(sinkhorn_tolerance > 0.0)) throw ConfigError("sinkhorn_tolerance must be > 0");
  }
};

// Mean squared error over all elements.
inline Tensor reconstruction_loss(const Tensor& x, const Tensor& x_hat) {
  if (x.shape() != x_hat.shape()) {
    throw DimensionError("reconstruction_loss: " + shape_str(x.shape()) + " vs " + shape_str(x_hat.shape()));
  }
  const std::size_t n = x.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = x_hat.data()[i] - x.data()[i];
    acc += d * d;
  }
  auto xn = x.node(), hn = x_hat.node();
  return detail::make_result({1}, {acc / static_cast<double>(n)}, {&x, &x_hat}, [xn, hn, n](const detail::Node& self) {
    const double k = 2.0 * self.grad[0] / static_cast<double>(n);
    if (hn->requires_grad) {
      auto& g = hn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += k * (hn->data[i] - xn->data[i]);
    }
    if (xn->requires_grad) {
      auto& g = xn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] -= k * (hn->data[i] - xn->data[i]);
    }
  });
}

// Mean over rows of -log softmax(logits)[label], via log-sum-exp.
inline Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy_loss: logits " + shape_str(logits.shape()) + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.dim(0), m = logits.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m) {
      throw ContractError("cross_entropy_loss: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                          " outside [0, " + std::to_string(m) + ")");
    }
  }
  std::vector<double> probs(n * m);
  double total = 0.0;
  const auto z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < m; ++j) mx = std::max(mx, z[i * m + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += std::exp(z[i * m + j] - mx);
    const double lse = mx + std::log(s);
    total += lse - z[i * m + static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < m; ++j) probs[i * m + j] = std::exp(z[i * m + j] - lse);
  }
  std::vector<int> lab(labels.begin(), labels.end());
  auto ln = logits.node();
  return detail::make_result({1}, {total / static_cast<double>(n)}, {&logits},
                             [ln, probs = std::move(probs), lab = std::move(lab), n, m](const detail::Node& self) {
                               if (!ln->requires_grad) return;
                               auto& g = ln->ensure_grad();
                               const double k = self.grad[0] / static_cast<double>(n);
                               for (std::size_t i = 0; i < n; ++i)
                                 for (std::size_t j = 0; j < m; ++j) {
                                   const double onehot = static_cast<std::size_t>(lab[i]) == j ? 1.0 : 0.0;
                                   g[i * m + j] += k * (probs[i * m + j] - onehot);
                                 }
                             });
}

// Coupling between two uniform empirical measures.
struct TransportPlan {
  std::size_t rows = 0, cols = 0;
  std::vector<double> plan;  // rows × cols, row-major
  std::vector<double> cost;  // squared Euclidean distances
  double objective = 0.0;    // Σ plan ⊙ cost
  // objective + ε·KL(plan ‖ a⊗b): the entropic OT value, whose gradient in the
  // points is exactly the detached-plan gradient at convergence.
  double regularized_objective = 0.0;
  double epsilon = 0.0;      // effective regularization used
  std::size_t iterations = 0;
  double row_error = 0.0;    // max |row sum − 1/rows|
  double col_error = 0.0;    // max |col sum − 1/cols|
  bool converged = false;
};

inline std::vector<double> squared_distances(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<double> c(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double diff = a.data()[i * d + k] - b.data()[j * d + k];
        acc += diff * diff;
      }
      c[i * m + j] = acc;
    }
  return c;
}

namespace detail {

inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Projects a positive matrix onto the transport polytope with uniform
// marginals: shrink over-full rows, then columns, then spread the remaining
// mass as a rank-one correction. Exact feasibility even before convergence.
inline void round_to_marginals(std::vector<double>& plan, std::size_t rows, std::size_t cols) {
  const double a = 1.0 / static_cast<double>(rows), b = 1.0 / static_cast<double>(cols);
  std::vector<double> row_def(rows), col_def(cols, 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += plan[i * cols + j];
    if (s > a)
      for (std::size_t j = 0; j < cols; ++j) plan[i * cols + j] *= a / s;
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += plan[i * cols + j];
    if (s > b)
      for (std::size_t i = 0; i < rows; ++i) plan[i * cols + j] *= b / s;
  }
  double total_def = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += plan[i * cols + j];
    row_def[i] = std::max(0.0, a - s);
    total_def += row_def[i];
  }
  for (std::size_t j = 0; j < cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += plan[i * cols + j];
    col_def[j] = std::max(0.0, b - s);
  }
  if (total_def <= 0.0) return;
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) plan[i * cols + j] += row_def[i] * col_def[j] / total_def;
}

}  // namespace detail

inline void marginal_residuals(TransportPlan& tp) {
  double row_err = 0.0, col_err = 0.0;
  for (std::size_t i = 0; i < tp.rows; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < tp.cols; ++j) s += tp.plan[i * tp.cols + j];
    row_err = std::max(row_err, std::abs(s - 1.0 / static_cast<double>(tp.rows)));
  }
  for (std::size_t j = 0; j < tp.cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < tp.rows; ++i) s += tp.plan[i * tp.cols + j];
    col_err = std::max(col_err, std::abs(s - 1.0 / static_cast<double>(tp.cols)));
  }
  tp.row_error = row_err;
  tp.col_error = col_err;
}

// Log-domain Sinkhorn for uniform marginals 1/rows and 1/cols. Iterates
// until both marginal violations drop below `tolerance` or max_iters.
inline TransportPlan solve_sinkhorn(std::vector<double> cost, std::size_t rows, std::size_t cols, double epsilon,
                                    std::size_t max_iters, double tolerance) {
  if (!(epsilon > 0.0)) throw ConfigError("sinkhorn epsilon must be > 0, got " + std::to_string(epsilon));
  TransportPlan tp;
  tp.rows = rows;
  tp.cols = cols;
  tp.epsilon = epsilon;
  const double log_a = -std::log(static_cast<double>(rows));
  const double log_b = -std::log(static_cast<double>(cols));
  std::vector<double> f(rows, 0.0), g(cols, 0.0), buf(std::max(rows, cols));
  tp.plan.assign(rows * cols, 0.0);

  auto update_f = [&] {
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) buf[j] = (g[j] - cost[i * cols + j]) / epsilon;
      f[i] = epsilon * (log_a - detail::log_sum_exp(std::span(buf.data(), cols)));
    }
  };
  auto update_g = [&] {
    for (std::size_t j = 0; j < cols; ++j) {
      for (std::size_t i = 0; i < rows; ++i) buf[i] = (f[i] - cost[i * cols + j]) / epsilon;
      g[j] = epsilon * (log_b - detail::log_sum_exp(std::span(buf.data(), rows)));
    }
  };
  auto marginal_errors = [&] {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        tp.plan[i * cols + j] = std::exp((f[i] + g[j] - cost[i * cols + j]) / epsilon);
    marginal_residuals(tp);
  };

  for (std::size_t it = 0; it < max_iters; ++it) {
    update_f();
    update_g();
    tp.iterations = it + 1;
    marginal_errors();
    if (tp.row_error < tolerance && tp.col_error < tolerance) {
      tp.converged = true;
      break;
    }
  }
  detail::round_to_marginals(tp.plan, rows, cols);
  marginal_residuals(tp);
  tp.objective = 0.0;
  double kl = 0.0;
  for (std::size_t k = 0; k < tp.plan.size(); ++k) {
    tp.objective += tp.plan[k] * cost[k];
    if (tp.plan[k] > 0.0) kl += tp.plan[k] * (std::log(tp.plan[k]) - log_a - log_b);
  }
  tp.regularized_objective = tp.objective + epsilon * kl;
  tp.cost = std::move(cost);
  return tp;
}

inline double effective_epsilon(const std::vector<double>& cost, const LossWeights& cfg) {
  if (cfg.sinkhorn_epsilon_mode == EpsilonMode::absolute) return cfg.sinkhorn_epsilon;
  double mean_cost = 0.0;
  for (double c : cost) mean_cost += c;
  mean_cost /= static_cast<double>(cost.size());
  // All-zero cost: every feasible plan is optimal, any positive epsilon works.
  return mean_cost > 0.0 ? cfg.sinkhorn_epsilon * mean_cost : cfg.sinkhorn_epsilon;
}

struct WassersteinResult {
  Tensor value;  // scalar ⟨π, C(y, y′)⟩
  TransportPlan plan;
};

// Entropic OT between the rows of y (n×d) and y_prime (n′×d) with squared
// Euclidean cost. The gradient treats the converged plan as a constant.
inline WassersteinResult sinkhorn_wasserstein(const Tensor& y, const Tensor& y_prime, const LossWeights& cfg) {
  if (!(cfg.sinkhorn_epsilon > 0.0)) throw ConfigError("sinkhorn_epsilon must be > 0");
  if (y.rank() != 2 || y_prime.rank() != 2 || y.dim(1) != y_prime.dim(1)) {
    throw DimensionError("sinkhorn_wasserstein: " + shape_str(y.shape()) + " vs " + shape_str(y_prime.shape()));
  }
  for (double v : y.data())
    if (!std::isfinite(v)) throw NumericError("sinkhorn_wasserstein: non-finite value in source latents");
  for (double v : y_prime.data())
    if (!std::isfinite(v)) throw NumericError("sinkhorn_wasserstein: non-finite value in condensed latents");

  const std::size_t n = y.dim(0), m = y_prime.dim(0), d = y.dim(1);
  std::vector<double> cost = squared_distances(y, y_prime);
  const double eps = effective_epsilon(cost, cfg);
  TransportPlan tp = solve_sinkhorn(std::move(cost), n, m, eps, cfg.sinkhorn_max_iters, cfg.sinkhorn_tolerance);

  auto yn = y.node(), pn = y_prime.node();
  std::vector<double> plan = tp.plan;
  Tensor value = detail::make_result(
      {1}, {tp.objective}, {&y, &y_prime}, [yn, pn, plan = std::move(plan), n, m, d](const detail::Node& self) {
        const double k = 2.0 * self.grad[0];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double w = k * plan[i * m + j];
            for (std::size_t c = 0; c < d; ++c) {
              const double diff = yn->data[i * d + c] - pn->data[j * d + c];
              if (yn->requires_grad) yn->ensure_grad()[i * d + c] += w * diff;
              if (pn->requires_grad) pn->ensure_grad()[j * d + c] -= w * diff;
            }
          }
      });
  return {value, std::move(tp)};
}

struct CovarianceResult {
  Tensor value;
  bool skipped = false;  // fewer than two rows: no spread to regularize
};

// ||Cov(Y′) − I||²_F with the biased (1/n′) covariance of the rows.
inline CovarianceResult covariance_loss(const Tensor& y_prime) {
  if (y_prime.rank() != 2) throw DimensionError("covariance_loss: expected a matrix, got " + shape_str(y_prime.shape()));
  const std::size_t n = y_prime.dim(0), d = y_prime.dim(1);
  if (n < 2) return {Tensor::scalar(0.0), true};
  const Tensor centered = add_row_broadcast(y_prime, scale(mean_rows(y_prime), -1.0));
  const Tensor cov = scale(matmul(transpose(centered), centered), 1.0 / static_cast<double>(n));
  return {sum(square(sub(cov, Tensor::eye(d)))), false};
}

inline double total_loss(double l_re, double l_ce, double l_w, double l_cov, const LossWeights& w) {
  const double terms[] = {l_re, l_ce, l_w, l_cov};
  const char* names[] = {"l_re", "l_ce", "l_w", "l_cov"};
  for (int i = 0; i < 4; ++i)
    if (!std::isfinite(terms[i])) throw NumericError(std::string("non-finite loss term ") + names[i]);
  return w.alpha0 * l_re + w.alpha1 * l_ce + w.alpha2 * l_w + w.alpha3 * l_cov;
}

// Differentiable weighted sum; terms with a zero weight are left out of the graph.
inline Tensor total_loss(const Tensor& l_re, const Tensor& l_ce, const Tensor& l_w, const Tensor& l_cov,
                         const LossWeights& w) {
  const Tensor* terms[] = {&l_re, &l_ce, &l_w, &l_cov};
  const double alphas[] = {w.alpha0, w.alpha1, w.alpha2, w.alpha3};
  const char* names[] = {"l_re", "l_ce", "l_w", "l_cov"};
  Tensor acc;
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(terms[i]->item())) throw NumericError(std::string("non-finite loss term ") + names[i]);
    if (alphas[i] == 0.0) continue;
    Tensor t = scale(*terms[i], alphas[i]);
    acc = acc.defined() ? add(acc, t) : t;
  }
  return acc.defined() ? acc : Tensor::scalar(0.0);
}

}  // namespace koopcon
