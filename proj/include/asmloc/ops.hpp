#pragma once

// Differentiable primitives. Every op validates extents, computes the forward
// value eagerly and records a closure that scatters the output gradient back.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "asmloc/tensor.hpp"

namespace asmloc {

namespace detail {

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.dim() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

inline Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

template <class Forward, class Derivative>
Tensor unary(const char* op, const Tensor& a, Forward f, Derivative df) {
  std::vector<double> out(a.size());
  auto x = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(x[i]);
  return make_result(op, a.shape(), std::move(out), {a}, [df](Node& self) {
    Node& in = input(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * df(in.value[i], self.value[i]);
  });
}

}  // namespace detail

/// [m×k]·[k×n] → [m×n]; dA = dZ·Bᵀ, dB = Aᵀ·dZ.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  auto A = a.data();
  auto B = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = B.data() + p * n;
      double* orow = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  return detail::make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    Node& na = detail::input(self, 0);
    Node& nb = detail::input(self, 1);
    const double* G = self.grad.data();
    if (na.requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += G[i * n + j] * nb.value[p * n + j];
          na.grad[i * k + p] += acc;
        }
    if (nb.requires_grad)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = na.value[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) nb.grad[p * n + j] += av * G[i * n + j];
        }
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  auto x = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return detail::make_result("transpose", {c, r}, std::move(out), {a}, [r, c](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) in.grad[i * c + j] += self.grad[j * r + i];
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size())
    throw DimensionError("reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  return detail::make_result("reshape", std::move(shape), std::move(out), {a}, [](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t s = 0; s < 2; ++s) {
      Node& in = detail::input(self, s);
      if (!in.requires_grad) continue;
      for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = detail::input(self, 0);
    Node& nb = detail::input(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (na.requires_grad) na.grad[i] += self.grad[i];
      if (nb.requires_grad) nb.grad[i] -= self.grad[i];
    }
  });
}

/// Elementwise product.
inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& na = detail::input(self, 0);
    Node& nb = detail::input(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (na.requires_grad) na.grad[i] += self.grad[i] * nb.value[i];
      if (nb.requires_grad) nb.grad[i] += self.grad[i] * na.value[i];
    }
  });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary("scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary("add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary("relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

/// log(a + eps).
inline Tensor log(const Tensor& a, double eps = 0.0) {
  return detail::unary("log", a, [eps](double x) { return std::log(x + eps); },
                       [eps](double x, double) { return 1.0 / (x + eps); });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return detail::make_result("sum", {}, {s}, {a}, [](Node& self) {
    Node& in = detail::input(self, 0);
    for (double& g : in.grad) g += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

/// Softmax along `axis` (0 or 1 for matrices, 0 for vectors), max-subtracted.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.dim() == 0 || x.dim() > 2 || axis >= x.dim())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(x.shape()));
  const std::size_t rows = x.dim() == 1 ? 1 : x.rows();
  const std::size_t cols = x.dim() == 1 ? x.size() : x.cols();
  // Slices run along `len` elements spaced by `stride`.
  const bool along_cols = x.dim() == 1 || axis == 1;
  const std::size_t len = along_cols ? cols : rows;
  const std::size_t count = along_cols ? rows : cols;
  const std::size_t stride = along_cols ? 1 : cols;
  if (len == 0) throw DimensionError("softmax: empty axis");
  auto offset = [=](std::size_t s) { return along_cols ? s * cols : s; };

  std::vector<double> out(x.size());
  auto v = x.data();
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t o = offset(s);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, v[o + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) z += (out[o + i * stride] = std::exp(v[o + i * stride] - mx));
    for (std::size_t i = 0; i < len; ++i) out[o + i * stride] /= z;
  }
  return detail::make_result("softmax", x.shape(), std::move(out), {x}, [=](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t s = 0; s < count; ++s) {
      const std::size_t o = offset(s);
      double dot = 0.0;
      for (std::size_t i = 0; i < len; ++i) dot += self.grad[o + i * stride] * self.value[o + i * stride];
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t idx = o + i * stride;
        in.grad[idx] += self.value[idx] * (self.grad[idx] - dot);
      }
    }
  });
}

/// Row softmax restricted to entries where `mask` is nonzero. Masked entries are
/// exactly 0 and a row without any unmasked entry is all zeros.
inline Tensor masked_softmax_rows(const Tensor& x, const Matrix& mask) {
  detail::require_matrix(x, "masked_softmax_rows");
  const std::size_t rows = x.rows(), cols = x.cols();
  if (mask.rows != rows || mask.cols != cols)
    throw DimensionError("masked_softmax_rows: mask extents differ from scores");
  std::vector<double> out(x.size(), 0.0);
  auto v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (mask(r, c) != 0.0) mx = std::max(mx, v[r * cols + c]);
    if (mx == -std::numeric_limits<double>::infinity()) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c)
      if (mask(r, c) != 0.0) z += (out[r * cols + c] = std::exp(v[r * cols + c] - mx));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= z;
  }
  return detail::make_result("masked_softmax_rows", x.shape(), std::move(out), {x}, [rows, cols](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) dot += self.grad[r * cols + c] * self.value[r * cols + c];
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        in.grad[i] += self.value[i] * (self.grad[i] - dot);
      }
    }
  });
}

/// Same-length temporal convolution with zero padding.
/// x: [T×Din], kernel: [w×Din×Dout] with odd w, bias: [Dout].
inline Tensor conv1d_temporal(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  detail::require_matrix(x, "conv1d_temporal");
  if (kernel.dim() != 3) throw DimensionError("conv1d_temporal: kernel must be [w x Din x Dout]");
  const std::size_t T = x.rows(), din = x.cols();
  const std::size_t w = kernel.shape()[0], dout = kernel.shape()[2];
  if (w % 2 == 0) throw ConfigError("conv1d_temporal: kernel width must be odd, got " + std::to_string(w));
  if (kernel.shape()[1] != din)
    throw DimensionError("conv1d_temporal: kernel input width " + std::to_string(kernel.shape()[1]) +
                         " differs from feature width " + std::to_string(din));
  if (bias.size() != dout) throw DimensionError("conv1d_temporal: bias length differs from output width");
  const auto half = static_cast<std::ptrdiff_t>(w / 2);

  std::vector<double> out(T * dout);
  auto X = x.data();
  auto K = kernel.data();
  auto B = bias.data();
  for (std::size_t t = 0; t < T; ++t) {
    double* orow = out.data() + t * dout;
    std::copy(B.begin(), B.end(), orow);
    for (std::size_t j = 0; j < w; ++j) {
      const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
      if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
      const double* xrow = X.data() + static_cast<std::size_t>(src) * din;
      const double* kj = K.data() + j * din * dout;
      for (std::size_t i = 0; i < din; ++i) {
        const double xv = xrow[i];
        if (xv == 0.0) continue;
        const double* krow = kj + i * dout;
        for (std::size_t o = 0; o < dout; ++o) orow[o] += xv * krow[o];
      }
    }
  }
  return detail::make_result(
      "conv1d_temporal", {T, dout}, std::move(out), {x, kernel, bias}, [=](Node& self) {
        Node& nx = detail::input(self, 0);
        Node& nk = detail::input(self, 1);
        Node& nb = detail::input(self, 2);
        const double* G = self.grad.data();
        if (nb.requires_grad)
          for (std::size_t t = 0; t < T; ++t)
            for (std::size_t o = 0; o < dout; ++o) nb.grad[o] += G[t * dout + o];
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t j = 0; j < w; ++j) {
            const auto src = static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(j) - half;
            if (src < 0 || src >= static_cast<std::ptrdiff_t>(T)) continue;
            const std::size_t s = static_cast<std::size_t>(src);
            for (std::size_t i = 0; i < din; ++i) {
              const std::size_t kbase = (j * din + i) * dout;
              if (nk.requires_grad) {
                const double xv = nx.value[s * din + i];
                for (std::size_t o = 0; o < dout; ++o) nk.grad[kbase + o] += xv * G[t * dout + o];
              }
              if (nx.requires_grad) {
                double acc = 0.0;
                for (std::size_t o = 0; o < dout; ++o) acc += nk.value[kbase + o] * G[t * dout + o];
                nx.grad[s * din + i] += acc;
              }
            }
          }
      });
}

/// x[T×D] + b[D] broadcast over rows.
inline Tensor add_row(const Tensor& x, const Tensor& b) {
  detail::require_matrix(x, "add_row");
  const std::size_t T = x.rows(), D = x.cols();
  if (b.size() != D) throw DimensionError("add_row: row vector length differs from column count");
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) out[t * D + d] = x[t * D + d] + b[d];
  return detail::make_result("add_row", x.shape(), std::move(out), {x, b}, [T, D](Node& self) {
    Node& nx = detail::input(self, 0);
    Node& nb = detail::input(self, 1);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        if (nx.requires_grad) nx.grad[t * D + d] += self.grad[t * D + d];
        if (nb.requires_grad) nb.grad[d] += self.grad[t * D + d];
      }
  });
}

/// x[T×D] ⊙ g[D] broadcast over rows.
inline Tensor mul_row(const Tensor& x, const Tensor& g) {
  detail::require_matrix(x, "mul_row");
  const std::size_t T = x.rows(), D = x.cols();
  if (g.size() != D) throw DimensionError("mul_row: row vector length differs from column count");
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) out[t * D + d] = x[t * D + d] * g[d];
  return detail::make_result("mul_row", x.shape(), std::move(out), {x, g}, [T, D](Node& self) {
    Node& nx = detail::input(self, 0);
    Node& ng = detail::input(self, 1);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t i = t * D + d;
        if (nx.requires_grad) nx.grad[i] += self.grad[i] * ng.value[d];
        if (ng.requires_grad) ng.grad[d] += self.grad[i] * nx.value[i];
      }
  });
}

/// x[T×D] ⊙ c[T] broadcast over columns.
inline Tensor mul_col(const Tensor& x, const Tensor& c) {
  detail::require_matrix(x, "mul_col");
  const std::size_t T = x.rows(), D = x.cols();
  if (c.size() != T) throw DimensionError("mul_col: column vector length differs from row count");
  std::vector<double> out(x.size());
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < D; ++d) out[t * D + d] = x[t * D + d] * c[t];
  return detail::make_result("mul_col", x.shape(), std::move(out), {x, c}, [T, D](Node& self) {
    Node& nx = detail::input(self, 0);
    Node& nc = detail::input(self, 1);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t i = t * D + d;
        if (nx.requires_grad) nx.grad[i] += self.grad[i] * nc.value[t];
        if (nc.requires_grad) nc.grad[t] += self.grad[i] * nx.value[i];
      }
  });
}

/// Column j of a matrix as a vector.
inline Tensor column(const Tensor& x, std::size_t j) {
  detail::require_matrix(x, "column");
  const std::size_t T = x.rows(), D = x.cols();
  if (j >= D) throw DimensionError("column: index out of range");
  std::vector<double> out(T);
  for (std::size_t t = 0; t < T; ++t) out[t] = x[t * D + j];
  return detail::make_result("column", {T}, std::move(out), {x}, [T, D, j](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t t = 0; t < T; ++t) in.grad[t * D + j] += self.grad[t];
  });
}

/// Columns [begin, end).
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  detail::require_matrix(x, "slice_cols");
  const std::size_t T = x.rows(), D = x.cols();
  if (begin >= end || end > D) throw DimensionError("slice_cols: invalid column range");
  const std::size_t W = end - begin;
  std::vector<double> out(T * W);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t d = 0; d < W; ++d) out[t * W + d] = x[t * D + begin + d];
  return detail::make_result("slice_cols", {T, W}, std::move(out), {x}, [=](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < W; ++d) in.grad[t * D + begin + d] += self.grad[t * W + d];
  });
}

inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const std::size_t T = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t D = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != T) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    D += p.cols();
  }
  std::vector<double> out(T * D);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t d = 0; d < widths[k]; ++d) out[t * D + off + d] = parts[k][t * widths[k] + d];
    off += widths[k];
  }
  return detail::make_result("concat_cols", {T, D}, std::move(out), parts, [T, D, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      Node& in = detail::input(self, k);
      if (in.requires_grad)
        for (std::size_t t = 0; t < T; ++t)
          for (std::size_t d = 0; d < widths[k]; ++d) in.grad[t * widths[k] + d] += self.grad[t * D + off + d];
      off += widths[k];
    }
  });
}

/// Indices of the k largest entries of column j, ties broken by lower row index.
inline std::vector<std::size_t> topk_rows(std::span<const double> values, std::size_t rows, std::size_t cols,
                                          std::size_t j, std::size_t k) {
  std::vector<std::size_t> idx(rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      const double va = values[a * cols + j], vb = values[b * cols + j];
                      return va != vb ? va > vb : a < b;
                    });
  idx.resize(k);
  return idx;
}

/// Per-column mean of the k largest temporal values: [T×K] → [K].
/// The selection is a constant of the pass; gradient reaches only the selected entries.
inline Tensor topk_mean_cols(const Tensor& x, std::size_t k) {
  detail::require_matrix(x, "topk_mean_cols");
  const std::size_t T = x.rows(), K = x.cols();
  if (k < 1 || k > T)
    throw ContractError("topk_mean_cols: k=" + std::to_string(k) + " outside [1, " + std::to_string(T) + "]");
  std::vector<double> out(K, 0.0);
  std::vector<std::size_t> chosen(K * k);
  for (std::size_t j = 0; j < K; ++j) {
    auto idx = topk_rows(x.data(), T, K, j, k);
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      chosen[j * k + i] = idx[i];
      s += x[idx[i] * K + j];
    }
    out[j] = s / static_cast<double>(k);
  }
  return detail::make_result("topk_mean_cols", {K}, std::move(out), {x}, [K, k, chosen](Node& self) {
    Node& in = detail::input(self, 0);
    const double inv = 1.0 / static_cast<double>(k);
    for (std::size_t j = 0; j < K; ++j)
      for (std::size_t i = 0; i < k; ++i) in.grad[chosen[j * k + i] * K + j] += self.grad[j] * inv;
  });
}

/// -Σ target·log(p + eps) for a probability vector p.
inline Tensor cross_entropy(const Tensor& p, std::span<const double> target, double eps = 1e-12) {
  if (p.size() != target.size()) throw DimensionError("cross_entropy: target length differs from p");
  double l = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (target[i] != 0.0) l -= target[i] * std::log(p[i] + eps);
  std::vector<double> y(target.begin(), target.end());
  return detail::make_result("cross_entropy", {}, {l}, {p}, [y, eps](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] != 0.0) in.grad[i] -= self.grad[0] * y[i] / (in.value[i] + eps);
  });
}

/// Row-wise -Σ_c target[t,c]·log(p[t,c] + eps): [T×K] → [T].
inline Tensor row_cross_entropy(const Tensor& p, const Matrix& target, double eps = 1e-12) {
  detail::require_matrix(p, "row_cross_entropy");
  const std::size_t T = p.rows(), K = p.cols();
  if (target.rows != T || target.cols != K) throw DimensionError("row_cross_entropy: target extents differ from p");
  std::vector<double> out(T, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < K; ++c)
      if (target(t, c) != 0.0) out[t] -= target(t, c) * std::log(p[t * K + c] + eps);
  return detail::make_result("row_cross_entropy", {T}, std::move(out), {p}, [target, T, K, eps](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < K; ++c)
        if (target(t, c) != 0.0) in.grad[t * K + c] -= self.grad[t] * target(t, c) / (in.value[t * K + c] + eps);
  });
}

/// Per-column standardization over the rows flagged in `rows_used`, using the
/// biased variance of those rows. Unflagged rows come out exactly zero.
inline Tensor standardize_cols_masked(const Tensor& x, const std::vector<std::uint8_t>& rows_used, double eps = 1e-5) {
  detail::require_matrix(x, "standardize_cols_masked");
  const std::size_t T = x.rows(), D = x.cols();
  if (rows_used.size() != T) throw DimensionError("standardize_cols_masked: row flag count differs from rows");
  const auto n = static_cast<double>(std::count_if(rows_used.begin(), rows_used.end(), [](auto f) { return f != 0; }));
  std::vector<double> out(x.size(), 0.0);
  std::vector<double> inv_std(D, 0.0);
  if (n > 0) {
    for (std::size_t d = 0; d < D; ++d) {
      double mu = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        if (rows_used[t]) mu += x[t * D + d];
      mu /= n;
      double var = 0.0;
      for (std::size_t t = 0; t < T; ++t)
        if (rows_used[t]) var += (x[t * D + d] - mu) * (x[t * D + d] - mu);
      var /= n;
      inv_std[d] = 1.0 / std::sqrt(var + eps);
      for (std::size_t t = 0; t < T; ++t)
        if (rows_used[t]) out[t * D + d] = (x[t * D + d] - mu) * inv_std[d];
    }
  }
  return detail::make_result(
      "standardize_cols_masked", x.shape(), std::move(out), {x}, [rows_used, inv_std, T, D, n](Node& self) {
        if (n == 0) return;
        Node& in = detail::input(self, 0);
        for (std::size_t d = 0; d < D; ++d) {
          double gsum = 0.0, gy = 0.0;
          for (std::size_t t = 0; t < T; ++t)
            if (rows_used[t]) {
              gsum += self.grad[t * D + d];
              gy += self.grad[t * D + d] * self.value[t * D + d];
            }
          for (std::size_t t = 0; t < T; ++t)
            if (rows_used[t]) {
              const std::size_t i = t * D + d;
              in.grad[i] += inv_std[d] * (self.grad[i] - gsum / n - self.value[i] * gy / n);
            }
        }
      });
}

/// Linear interpolation of rows at real positions (clamped to [0, T-1]).
/// The positions are constants; gradient flows to the two bracketing rows.
inline Tensor resample_rows(const Tensor& x, std::span<const double> positions) {
  detail::require_matrix(x, "resample_rows");
  const std::size_t T = x.rows(), D = x.cols();
  if (T == 0) throw ContractError("resample_rows: empty sequence");
  const std::size_t N = positions.size();
  std::vector<std::size_t> lo(N);
  std::vector<double> frac(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double p = std::clamp(positions[i], 0.0, static_cast<double>(T - 1));
    lo[i] = std::min(static_cast<std::size_t>(std::floor(p)), T - 1);
    frac[i] = p - static_cast<double>(lo[i]);
  }
  std::vector<double> out(N * D);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t hi = std::min(lo[i] + 1, T - 1);
    for (std::size_t d = 0; d < D; ++d)
      out[i * D + d] = frac[i] == 0.0 ? x[lo[i] * D + d]
                                      : (1.0 - frac[i]) * x[lo[i] * D + d] + frac[i] * x[hi * D + d];
  }
  return detail::make_result("resample_rows", {N, D}, std::move(out), {x}, [lo, frac, T, D, N](Node& self) {
    Node& in = detail::input(self, 0);
    for (std::size_t i = 0; i < N; ++i) {
      const std::size_t hi = std::min(lo[i] + 1, T - 1);
      for (std::size_t d = 0; d < D; ++d) {
        in.grad[lo[i] * D + d] += (1.0 - frac[i]) * self.grad[i * D + d];
        if (frac[i] != 0.0) in.grad[hi * D + d] += frac[i] * self.grad[i * D + d];
      }
    }
  });
}

}  // namespace asmloc
