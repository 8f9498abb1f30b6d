#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "koopcon/tensor.hpp"

namespace koopcon {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline void accumulate(Node& target, const std::vector<double>& delta) {
  if (!target.requires_grad) return;
  auto& g = target.ensure_grad();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
}

inline void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_str(a.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {&a}, [an, deriv](const Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(an->data[i], self.data[i]);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
    detail::accumulate(*an, self.grad);
    detail::accumulate(*bn, self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
    detail::accumulate(*an, self.grad);
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  auto an = a.node(), bn = b.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &b}, [an, bn](const detail::Node& self) {
    if (an->requires_grad) {
      auto& g = an->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn->data[i];
    }
    if (bn->requires_grad) {
      auto& g = bn->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an->data[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

// Adds a vector along the last axis (a row vector for matrices, a bias for dense layers).
inline Tensor add_row_broadcast(const Tensor& a, const Tensor& row) {
  const std::size_t n = a.shape().back();
  if (row.numel() != n) {
    throw DimensionError("add_row_broadcast: row of shape " + shape_str(row.shape()) +
                         " does not match last extent of " + shape_str(a.shape()));
  }
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + row.data()[i % n];
  auto an = a.node(), rn = row.node();
  return detail::make_result(a.shape(), std::move(out), {&a, &row}, [an, rn, n](const detail::Node& self) {
    detail::accumulate(*an, self.grad);
    if (rn->requires_grad) {
      auto& g = rn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i % n] += self.grad[i];
    }
  });
}

// Per-channel bias for n×c×h×w activations.
inline Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  detail::require_rank(x, 4, "add_channel_bias");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (bias.numel() != c) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) + " for input " +
                         shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t base = (s * c + ch) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = x.data()[base + i] + bias.data()[ch];
    }
  auto xn = x.node(), bn = bias.node();
  return detail::make_result(x.shape(), std::move(out), {&x, &bias},
                             [xn, bn, n, c, plane](const detail::Node& self) {
                               detail::accumulate(*xn, self.grad);
                               if (bn->requires_grad) {
                                 auto& g = bn->ensure_grad();
                                 for (std::size_t s = 0; s < n; ++s)
                                   for (std::size_t ch = 0; ch < c; ++ch) {
                                     const std::size_t base = (s * c + ch) * plane;
                                     double acc = 0.0;
                                     for (std::size_t i = 0; i < plane; ++i) acc += self.grad[base + i];
                                     g[ch] += acc;
                                   }
                               }
                             });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.data()) acc += v;
  auto an = a.node();
  return detail::make_result({1}, {acc}, {&a}, [an](const detail::Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

// Column means of an m×n matrix, returned as 1×n.
inline Tensor mean_rows(const Tensor& a) {
  detail::require_rank(a, 2, "mean_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.data()[i * n + j];
  for (double& v : out) v /= static_cast<double>(m);
  auto an = a.node();
  return detail::make_result({1, n}, std::move(out), {&a}, [an, m, n](const detail::Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j] * inv;
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto an = a.node();
  return detail::make_result(std::move(shape), a.values(), {&a},
                             [an](const detail::Node& self) { detail::accumulate(*an, self.grad); });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto an = a.node();
  return detail::make_result({n, m}, std::move(out), {&a}, [an, m, n](const detail::Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

// Concatenation along axis 0; trailing extents must agree.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw DimensionError("concat_rows: " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  Shape shape = parts[0].shape();
  shape[0] = rows;
  std::vector<double> out;
  out.reserve(shape_numel(shape));
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const Tensor& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    nodes.push_back(p.node());
  }
  return detail::make_result(std::move(shape), std::move(out), parts, [nodes](const detail::Node& self) {
    std::size_t offset = 0;
    for (const auto& n : nodes) {
      if (n->requires_grad) {
        auto& g = n->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      }
      offset += n->data.size();
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto p = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * p));
  detail::MatMap(out.data(), m, p).noalias() =
      detail::ConstMatMap(a.data().data(), m, k) * detail::ConstMatMap(b.data().data(), k, p);
  auto an = a.node(), bn = b.node();
  return detail::make_result({a.dim(0), b.dim(1)}, std::move(out), {&a, &b},
                             [an, bn, m, k, p](const detail::Node& self) {
                               detail::ConstMatMap g(self.grad.data(), m, p);
                               if (an->requires_grad) {
                                 detail::MatMap(an->ensure_grad().data(), m, k).noalias() +=
                                     g * detail::ConstMatMap(bn->data.data(), k, p).transpose();
                               }
                               if (bn->requires_grad) {
                                 detail::MatMap(bn->ensure_grad().data(), k, p).noalias() +=
                                     detail::ConstMatMap(an->data.data(), m, k).transpose() * g;
                               }
                             });
}

// Softmax along `axis`, max-subtracted.
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw DimensionError("softmax: axis out of range for " + shape_str(a.shape()));
  const std::size_t k = a.dim(axis);
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t outer = a.numel() / (k * inner);
  std::vector<double> out(a.numel());
  const auto in = a.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * k * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, in[base + j * inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        const double e = std::exp(in[base + j * inner] - mx);
        out[base + j * inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < k; ++j) out[base + j * inner] /= z;
    }
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), {&a}, [an, k, inner, outer](const detail::Node& self) {
    if (!an->requires_grad) return;
    auto& g = an->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * k * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += self.grad[base + j * inner] * self.data[base + j * inner];
        for (std::size_t j = 0; j < k; ++j) {
          const std::size_t idx = base + j * inner;
          g[idx] += self.data[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Convolution

struct ConvGeometry {
  std::size_t n, c, h, w;     // input
  std::size_t kh, kw;
  std::size_t stride, padding;
  std::size_t oh, ow;         // output of the forward (non-transposed) convolution
};

namespace detail {

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Unfolds n×c×h×w into a (c·kh·kw) × (n·oh·ow) row-major matrix.
inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t plane = g.oh * g.ow;
  const std::size_t ncols = g.n * plane;
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t s = 0; s < g.n; ++s) {
          const double* src = x + (s * g.c + ch) * g.h * g.w;
          double* dst = row + s * plane;
          for (std::size_t oi = 0; oi < g.oh; ++oi) {
            const auto ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
            for (std::size_t oj = 0; oj < g.ow; ++oj) {
              const auto jj =
                  static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
              const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<std::ptrdiff_t>(g.h) &&
                                  jj < static_cast<std::ptrdiff_t>(g.w);
              dst[oi * g.ow + oj] = inside ? src[ii * static_cast<std::ptrdiff_t>(g.w) + jj] : 0.0;
            }
          }
        }
      }
}

// Adjoint of im2col: folds columns back, summing overlaps into x (accumulating).
inline void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const std::size_t plane = g.oh * g.ow;
  const std::size_t ncols = g.n * plane;
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((ch * g.kh + ki) * g.kw + kj) * ncols;
        for (std::size_t s = 0; s < g.n; ++s) {
          double* dst = x + (s * g.c + ch) * g.h * g.w;
          const double* src = row + s * plane;
          for (std::size_t oi = 0; oi < g.oh; ++oi) {
            const auto ii = static_cast<std::ptrdiff_t>(oi * g.stride + ki) - static_cast<std::ptrdiff_t>(g.padding);
            if (ii < 0 || ii >= static_cast<std::ptrdiff_t>(g.h)) continue;
            for (std::size_t oj = 0; oj < g.ow; ++oj) {
              const auto jj =
                  static_cast<std::ptrdiff_t>(oj * g.stride + kj) - static_cast<std::ptrdiff_t>(g.padding);
              if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(g.w)) continue;
              dst[ii * static_cast<std::ptrdiff_t>(g.w) + jj] += src[oi * g.ow + oj];
            }
          }
        }
      }
}

// n×f×P  <->  f×(n·P)
inline void batch_to_channel_major(const double* src, std::size_t n, std::size_t f, std::size_t plane, double* dst) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < f; ++ch)
      std::copy_n(src + (s * f + ch) * plane, plane, dst + ch * n * plane + s * plane);
}

inline void channel_major_to_batch(const double* src, std::size_t n, std::size_t f, std::size_t plane, double* dst) {
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < f; ++ch)
      std::copy_n(src + ch * n * plane + s * plane, plane, dst + (s * f + ch) * plane);
}

}  // namespace detail

// Cross-correlation (no kernel flip). input n×c×h×w, kernel f×c×kh×kw.
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1, std::size_t padding = 0) {
  detail::require_rank(input, 4, "conv2d input");
  detail::require_rank(kernel, 4, "conv2d kernel");
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (kernel.dim(1) != input.dim(1)) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(kernel.dim(1)) + " channels, input " + shape_str(input.shape()));
  }
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3),
                 stride, padding, 0, 0};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel.shape()) + " larger than padded input " +
                         shape_str(input.shape()) + " (padding " + std::to_string(padding) + ")");
  }
  g.oh = detail::conv_out_extent(g.h, g.kh, stride, padding);
  g.ow = detail::conv_out_extent(g.w, g.kw, stride, padding);
  const std::size_t f = kernel.dim(0);
  const std::size_t ckk = g.c * g.kh * g.kw;
  const std::size_t plane = g.oh * g.ow;
  const std::size_t ncols = g.n * plane;

  std::vector<double> cols(ckk * ncols);
  detail::im2col(input.data().data(), g, cols.data());
  std::vector<double> cm(f * ncols);
  detail::MatMap(cm.data(), f, ncols).noalias() =
      detail::ConstMatMap(kernel.data().data(), f, ckk) * detail::ConstMatMap(cols.data(), ckk, ncols);
  std::vector<double> out(g.n * f * plane);
  detail::channel_major_to_batch(cm.data(), g.n, f, plane, out.data());

  auto xn = input.node(), kn = kernel.node();
  return detail::make_result({g.n, f, g.oh, g.ow}, std::move(out), {&input, &kernel},
                             [xn, kn, g, f, ckk, plane, ncols](const detail::Node& self) {
                               std::vector<double> gcm(f * ncols);
                               detail::batch_to_channel_major(self.grad.data(), g.n, f, plane, gcm.data());
                               detail::ConstMatMap gm(gcm.data(), f, ncols);
                               if (kn->requires_grad) {
                                 std::vector<double> cols(ckk * ncols);
                                 detail::im2col(xn->data.data(), g, cols.data());
                                 detail::MatMap(kn->ensure_grad().data(), f, ckk).noalias() +=
                                     gm * detail::ConstMatMap(cols.data(), ckk, ncols).transpose();
                               }
                               if (xn->requires_grad) {
                                 std::vector<double> gcols(ckk * ncols);
                                 detail::MatMap(gcols.data(), ckk, ncols).noalias() =
                                     detail::ConstMatMap(kn->data.data(), f, ckk).transpose() * gm;
                                 detail::col2im(gcols.data(), g, xn->ensure_grad().data());
                               }
                             });
}

// Transposed convolution, the adjoint of conv2d in its input. input n×cin×h×w,
// kernel cin×cout×kh×kw; output extent (h−1)·stride − 2·padding + kh.
inline Tensor conv_transpose2d(const Tensor& input, const Tensor& kernel, std::size_t stride = 1,
                               std::size_t padding = 0) {
  detail::require_rank(input, 4, "conv_transpose2d input");
  detail::require_rank(kernel, 4, "conv_transpose2d kernel");
  if (stride == 0) throw ContractError("conv_transpose2d: stride must be positive");
  if (kernel.dim(0) != input.dim(1)) {
    throw DimensionError("conv_transpose2d: kernel " + shape_str(kernel.shape()) + " vs input " +
                         shape_str(input.shape()));
  }
  const std::size_t n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t cout = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  const std::ptrdiff_t oh_signed = static_cast<std::ptrdiff_t>((h - 1) * stride + kh) - 2 * static_cast<std::ptrdiff_t>(padding);
  const std::ptrdiff_t ow_signed = static_cast<std::ptrdiff_t>((w - 1) * stride + kw) - 2 * static_cast<std::ptrdiff_t>(padding);
  if (oh_signed <= 0 || ow_signed <= 0) {
    throw DimensionError("conv_transpose2d: padding " + std::to_string(padding) + " leaves no output for " +
                         shape_str(input.shape()));
  }
  // Geometry of the forward convolution this op is the adjoint of.
  ConvGeometry g{n, cout, static_cast<std::size_t>(oh_signed), static_cast<std::size_t>(ow_signed), kh, kw,
                 stride, padding, h, w};
  const std::size_t ckk = cout * kh * kw;
  const std::size_t plane = h * w;
  const std::size_t ncols = n * plane;

  std::vector<double> xcm(cin * ncols);
  detail::batch_to_channel_major(input.data().data(), n, cin, plane, xcm.data());
  std::vector<double> cols(ckk * ncols);
  detail::MatMap(cols.data(), ckk, ncols).noalias() =
      detail::ConstMatMap(kernel.data().data(), cin, ckk).transpose() * detail::ConstMatMap(xcm.data(), cin, ncols);
  std::vector<double> out(n * cout * g.h * g.w, 0.0);
  detail::col2im(cols.data(), g, out.data());

  auto xn = input.node(), kn = kernel.node();
  return detail::make_result({n, cout, g.h, g.w}, std::move(out), {&input, &kernel},
                             [xn, kn, g, cin, ckk, plane, ncols](const detail::Node& self) {
                               std::vector<double> gcols(ckk * ncols);
                               detail::im2col(self.grad.data(), g, gcols.data());
                               detail::ConstMatMap gc(gcols.data(), ckk, ncols);
                               if (xn->requires_grad) {
                                 std::vector<double> gx(cin * ncols);
                                 detail::MatMap(gx.data(), cin, ncols).noalias() =
                                     detail::ConstMatMap(kn->data.data(), cin, ckk) * gc;
                                 std::vector<double> gxb(gx.size());
                                 detail::channel_major_to_batch(gx.data(), g.n, cin, plane, gxb.data());
                                 detail::accumulate(*xn, gxb);
                               }
                               if (kn->requires_grad) {
                                 std::vector<double> xcm(cin * ncols);
                                 detail::batch_to_channel_major(xn->data.data(), g.n, cin, plane, xcm.data());
                                 detail::MatMap(kn->ensure_grad().data(), cin, ckk).noalias() +=
                                     detail::ConstMatMap(xcm.data(), cin, ncols) * gc.transpose();
                               }
                             });
}

// Non-overlapping k×k average pooling; trailing rows/columns that do not fill a window are dropped.
inline Tensor avg_pool2d(const Tensor& x, std::size_t k) {
  detail::require_rank(x, 4, "avg_pool2d");
  if (k == 0 || x.dim(2) < k || x.dim(3) < k) {
    throw DimensionError("avg_pool2d: window " + std::to_string(k) + " on " + shape_str(x.shape()));
  }
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  std::vector<double> out(nc * oh * ow, 0.0);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        double acc = 0.0;
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t b = 0; b < k; ++b) acc += x.data()[(p * h + i * k + a) * w + j * k + b];
        out[(p * oh + i) * ow + j] = acc * inv;
      }
  auto xn = x.node();
  return detail::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(out), {&x},
                             [xn, nc, h, w, oh, ow, k, inv](const detail::Node& self) {
                               if (!xn->requires_grad) return;
                               auto& g = xn->ensure_grad();
                               for (std::size_t p = 0; p < nc; ++p)
                                 for (std::size_t i = 0; i < oh; ++i)
                                   for (std::size_t j = 0; j < ow; ++j) {
                                     const double v = self.grad[(p * oh + i) * ow + j] * inv;
                                     for (std::size_t a = 0; a < k; ++a)
                                       for (std::size_t b = 0; b < k; ++b) g[(p * h + i * k + a) * w + j * k + b] += v;
                                   }
                             });
}

}  // namespace koopcon
