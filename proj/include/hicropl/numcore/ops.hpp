// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "hicropl/numcore/kernels.hpp"
#include "hicropl/numcore/tensor.hpp"

namespace hicropl {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " differ");
}

inline void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() > 2) throw DimensionError(std::string(op) + ": expected rank <= 2, got " + shape_str(a.shape()));
}

inline void require_finite(const Tensor& a, const char* op) {
  for (double x : a.data())
    if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
}

inline Shape matrix_shape(std::size_t r, std::size_t c) { return {r, c}; }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "add", [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p)
      if (double* g = grad_target(self, p))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "sub", [](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, "mul", [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * bv[i];
    if (double* g = grad_target(self, 1))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "scale", [s](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * s;
  });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return Tensor::make_result(a.shape(), std::move(out), {a}, "add_scalar", [](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor abs(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(a[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, "abs", [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        g[i] += av[i] > 0 ? self.grad[i] : (av[i] < 0 ? -self.grad[i] : 0.0);
  });
}

inline Tensor square(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * a[i];
  return Tensor::make_result(a.shape(), std::move(out), {a}, "square", [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += 2.0 * av[i] * self.grad[i];
  });
}

// Natural log with inputs clamped from below at `floor`; the clamped region
// has zero gradient.
inline Tensor log(const Tensor& a, double floor = 0.0) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(a[i], floor));
  return Tensor::make_result(a.shape(), std::move(out), {a}, "log", [floor](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i)
        if (av[i] > floor) g[i] += self.grad[i] / av[i];
  });
}

// Exact GELU: x * Phi(x) with the Gaussian CDF.
inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline Tensor gelu(const Tensor& a) {
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu_value(a[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, "gelu", [](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * gelu_derivative(av[i]);
  });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double x : a.data()) acc += x;
  return Tensor::make_result({1}, {acc}, {a}, "sum", [](detail::Node& self) {
    if (double* g = grad_target(self, 0)) {
      const std::size_t n = self.parents[0]->data.size();
      for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor dot(const Tensor& u, const Tensor& v) { return sum(mul(u, v)); }

// [r x c] -> [r]
inline Tensor sum_cols(const Tensor& a) {
  detail::require_matrix(a, "sum_cols");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += a[i * c + j];
  return Tensor::make_result({r}, std::move(out), {a}, "sum_cols", [r, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i];
  });
}

// [r x c] -> [1 x c]
inline Tensor mean_rows(const Tensor& a) {
  detail::require_matrix(a, "mean_rows");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(c, 0.0);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a[i * c + j];
  for (auto& x : out) x /= static_cast<double>(r);
  return Tensor::make_result({1, c}, std::move(out), {a}, "mean_rows", [r, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j] / static_cast<double>(r);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q)
    throw DimensionError("matmul: inner extents differ for " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(p * r, 0.0);
  kernels::gemm_nn(a.data().data(), b.data().data(), out.data(), p, q, r);
  return Tensor::make_result({p, r}, std::move(out), {a, b}, "matmul", [p, q, r](detail::Node& self) {
    const auto& av = self.parents[0]->data;
    const auto& bv = self.parents[1]->data;
    if (double* g = grad_target(self, 0)) kernels::gemm_nt(self.grad.data(), bv.data(), g, p, r, q);
    if (double* g = grad_target(self, 1)) kernels::gemm_tn(av.data(), self.grad.data(), g, p, q, r);
  });
}

inline Tensor transpose(const Tensor& a) {
  detail::require_matrix(a, "transpose");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return Tensor::make_result({c, r}, std::move(out), {a}, "transpose", [r, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[j * r + i];
  });
}

// [r x c] + [c] broadcast over rows.
inline Tensor add_row(const Tensor& a, const Tensor& row) {
  detail::require_matrix(a, "add_row");
  const std::size_t r = a.rows(), c = a.cols();
  if (row.numel() != c)
    throw DimensionError("add_row: row " + shape_str(row.shape()) + " does not match " + shape_str(a.shape()));
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = a[i * c + j] + row[j];
  Shape shape = a.rank() == 1 ? Shape{c} : Shape{r, c};
  return Tensor::make_result(std::move(shape), std::move(out), {a, row}, "add_row", [r, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < r * c; ++i) g[i] += self.grad[i];
    if (double* g = grad_target(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
  });
}

// [B*S x c] + [S x c] broadcast over B consecutive blocks.
inline Tensor add_blocks(const Tensor& a, const Tensor& block) {
  detail::require_matrix(a, "add_blocks");
  detail::require_matrix(block, "add_blocks");
  const std::size_t c = a.cols(), s = block.rows();
  if (block.cols() != c || a.rows() % s != 0)
    throw DimensionError("add_blocks: block " + shape_str(block.shape()) + " does not tile " + shape_str(a.shape()));
  const std::size_t nb = a.rows() / s;
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t b = 0; b < nb; ++b)
    for (std::size_t i = 0; i < s * c; ++i) out[b * s * c + i] += block[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, block}, "add_blocks", [nb, s, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    if (double* g = grad_target(self, 1))
      for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t i = 0; i < s * c; ++i) g[i] += self.grad[b * s * c + i];
  });
}

// ---------------------------------------------------------------------------
// Row structure

inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_rows");
    if (p.cols() != c)
      throw DimensionError("concat_rows: width " + std::to_string(p.cols()) + " differs from " + std::to_string(c));
    total += p.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor::make_result({total, c}, std::move(out), parts, "concat_rows",
                             [offsets](detail::Node& self) {
                               for (std::size_t p = 0; p < self.parents.size(); ++p)
                                 if (double* g = grad_target(self, p)) {
                                   const std::size_t n = self.parents[p]->data.size();
                                   for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[offsets[p] + i];
                                 }
                             });
}

inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t count) {
  detail::require_matrix(a, "slice_rows");
  const std::size_t c = a.cols();
  if (count == 0 || begin + count > a.rows())
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") outside " +
                         shape_str(a.shape()));
  std::vector<double> out(a.data().begin() + begin * c, a.data().begin() + (begin + count) * c);
  return Tensor::make_result({count, c}, std::move(out), {a}, "slice_rows", [begin, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * c + i] += self.grad[i];
  });
}

inline constexpr long kZeroRow = -1;

// Selects rows by index; kZeroRow yields a row of zeros.
inline Tensor gather_rows(const Tensor& a, const std::vector<long>& index) {
  detail::require_matrix(a, "gather_rows");
  const std::size_t c = a.cols();
  const long n = static_cast<long>(a.rows());
  if (index.empty()) throw DimensionError("gather_rows: empty index");
  std::vector<double> out(index.size() * c, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    const long src = index[i];
    if (src == kZeroRow) continue;
    if (src < 0 || src >= n)
      throw DimensionError("gather_rows: index " + std::to_string(src) + " outside " + shape_str(a.shape()));
    std::copy_n(a.data().begin() + src * static_cast<long>(c), c, out.begin() + static_cast<long>(i * c));
  }
  return Tensor::make_result({index.size(), c}, std::move(out), {a}, "gather_rows", [index, c](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] == kZeroRow) continue;
        double* dst = g + index[i] * static_cast<long>(c);
        for (std::size_t j = 0; j < c; ++j) dst[j] += self.grad[i * c + j];
      }
  });
}

// Overwrites the first prefix.rows() rows of each of `blocks` consecutive
// row blocks of `a` with `prefix`.
inline Tensor replace_block_prefix(const Tensor& a, const Tensor& prefix, std::size_t blocks) {
  detail::require_matrix(a, "replace_block_prefix");
  detail::require_matrix(prefix, "replace_block_prefix");
  const std::size_t c = a.cols(), m = prefix.rows();
  if (prefix.cols() != c || blocks == 0 || a.rows() % blocks != 0 || a.rows() / blocks < m)
    throw DimensionError("replace_block_prefix: prefix " + shape_str(prefix.shape()) + " does not fit " +
                         shape_str(a.shape()) + " in " + std::to_string(blocks) + " blocks");
  const std::size_t s = a.rows() / blocks;
  std::vector<double> out(a.data().begin(), a.data().end());
  for (std::size_t b = 0; b < blocks; ++b) std::copy(prefix.data().begin(), prefix.data().end(), out.begin() + b * s * c);
  return Tensor::make_result(a.shape(), std::move(out), {a, prefix}, "replace_block_prefix",
                             [blocks, s, m, c](detail::Node& self) {
                               if (double* g = grad_target(self, 0))
                                 for (std::size_t b = 0; b < blocks; ++b)
                                   for (std::size_t i = m * c; i < s * c; ++i) g[b * s * c + i] += self.grad[b * s * c + i];
                               if (double* g = grad_target(self, 1))
                                 for (std::size_t b = 0; b < blocks; ++b)
                                   for (std::size_t i = 0; i < m * c; ++i) g[i] += self.grad[b * s * c + i];
                             });
}

// ---------------------------------------------------------------------------
// Normalization and probability

// Row-wise softmax of x / temperature, stabilized by max subtraction.
inline Tensor softmax(const Tensor& x, double temperature = 1.0) {
  detail::require_matrix(x, "softmax");
  if (!(temperature > 0.0)) throw ContractError("softmax: temperature must be positive");
  detail::require_finite(x, "softmax");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += out[i * c + j] = std::exp((row[j] - mx) / temperature);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "softmax", [r, c, temperature](detail::Node& self) {
    if (double* g = grad_target(self, 0))
      for (std::size_t i = 0; i < r; ++i) {
        const double* y = self.data.data() + i * c;
        const double* dy = self.grad.data() + i * c;
        double inner = 0.0;
        for (std::size_t j = 0; j < c; ++j) inner += y[j] * dy[j];
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += y[j] * (dy[j] - inner) / temperature;
      }
  });
}

// Mean over rows of -log softmax(logits)[label].
inline Tensor cross_entropy_logits(const Tensor& logits, const std::vector<std::size_t>& labels) {
  detail::require_matrix(logits, "cross_entropy_logits");
  detail::require_finite(logits, "cross_entropy_logits");
  const std::size_t r = logits.rows(), c = logits.cols();
  if (labels.size() != r) throw DimensionError("cross_entropy_logits: label count differs from row count");
  std::vector<double> probs(r * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] >= c) throw DimensionError("cross_entropy_logits: label out of range");
    const double* row = logits.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += probs[i * c + j] = std::exp(row[j] - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss += -(row[labels[i]] - mx - std::log(z));
  }
  loss /= static_cast<double>(r);
  return Tensor::make_result({1}, {loss}, {logits}, "cross_entropy",
                             [probs = std::move(probs), labels, r, c](detail::Node& self) {
                               if (double* g = grad_target(self, 0)) {
                                 const double s = self.grad[0] / static_cast<double>(r);
                                 for (std::size_t i = 0; i < r; ++i)
                                   for (std::size_t j = 0; j < c; ++j)
                                     g[i * c + j] += s * (probs[i * c + j] - (j == labels[i] ? 1.0 : 0.0));
                               }
                             });
}

inline constexpr double kLayerNormEps = 1e-5;

// Row-wise (x - mean) / sqrt(var + eps) * gain + bias, biased variance.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = kLayerNormEps) {
  detail::require_matrix(x, "layer_norm");
  const std::size_t r = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c)
    throw DimensionError("layer_norm: gain " + shape_str(gain.shape()) + " / bias " + shape_str(bias.shape()) +
                         " do not match width of " + shape_str(x.shape()));
  if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
  std::vector<double> out(r * c), xhat(r * c), inv_std(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data().data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gain[j] + bias[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias}, "layer_norm",
      [xhat = std::move(xhat), inv_std = std::move(inv_std), r, c](detail::Node& self) {
        const auto& gv = self.parents[1]->data;
        if (double* g = grad_target(self, 0))
          for (std::size_t i = 0; i < r; ++i) {
            const double* dy = self.grad.data() + i * c;
            const double* xh = xhat.data() + i * c;
            double mean_d = 0.0, mean_dx = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double d = dy[j] * gv[j];
              mean_d += d;
              mean_dx += d * xh[j];
            }
            mean_d /= static_cast<double>(c);
            mean_dx /= static_cast<double>(c);
            for (std::size_t j = 0; j < c; ++j)
              g[i * c + j] += inv_std[i] * (dy[j] * gv[j] - mean_d - xh[j] * mean_dx);
          }
        if (double* g = grad_target(self, 1))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * xhat[i * c + j];
        if (double* g = grad_target(self, 2))
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j];
      });
}

// Scales each row to unit L2 norm. A zero row has no direction and is an error.
inline Tensor normalize_rows(const Tensor& x) {
  detail::require_matrix(x, "normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  std::vector<double> out(r * c), norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < c; ++j) ss += x[i * c + j] * x[i * c + j];
    norms[i] = std::sqrt(ss);
    if (!std::isfinite(norms[i])) throw NumericError("row " + std::to_string(i) + " has a non-finite norm");
    if (!(norms[i] > 0.0)) throw DegenerateVectorError("row " + std::to_string(i) + " has zero norm");
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, "normalize_rows",
                             [norms = std::move(norms), r, c](detail::Node& self) {
                               if (double* g = grad_target(self, 0))
                                 for (std::size_t i = 0; i < r; ++i) {
                                   const double* y = self.data.data() + i * c;
                                   const double* dy = self.grad.data() + i * c;
                                   double inner = 0.0;
                                   for (std::size_t j = 0; j < c; ++j) inner += y[j] * dy[j];
                                   for (std::size_t j = 0; j < c; ++j)
                                     g[i * c + j] += (dy[j] - y[j] * inner) / norms[i];
                                 }
                             });
}

// Cosine between same-index rows of a and b: [r x c], [r x c] -> [r].
// Computed as <a,b> / sqrt(|a|^2 |b|^2), which is exactly +-1 for b = +-a
// because sqrt(fl(x*x)) == |x| in IEEE arithmetic.
inline Tensor row_cosine(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "row_cosine");
  detail::require_matrix(a, "row_cosine");
  const std::size_t r = a.rows(), c = a.cols();
  std::vector<double> out(r), saa(r), sbb(r);
  for (std::size_t i = 0; i < r; ++i) {
    double ab = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      ab += a[i * c + j] * b[i * c + j];
      saa[i] += a[i * c + j] * a[i * c + j];
      sbb[i] += b[i * c + j] * b[i * c + j];
    }
    const double denom = std::sqrt(saa[i] * sbb[i]);
    if (!std::isfinite(denom) || !std::isfinite(ab))
      throw NumericError("row_cosine: row " + std::to_string(i) + " is not finite");
    if (!(saa[i] > 0.0 && sbb[i] > 0.0)) throw DegenerateVectorError("row_cosine: row " + std::to_string(i) + " has zero norm");
    out[i] = std::clamp(ab / denom, -1.0, 1.0);  // rounding can overshoot by an ulp
  }
  return Tensor::make_result({r}, std::move(out), {a, b}, "row_cosine",
                             [saa = std::move(saa), sbb = std::move(sbb), r, c](detail::Node& self) {
                               const auto& av = self.parents[0]->data;
                               const auto& bv = self.parents[1]->data;
                               // d cos / da = b / (|a||b|) - cos a / |a|^2, symmetrically for b.
                               for (std::size_t side = 0; side < 2; ++side) {
                                 double* g = grad_target(self, side);
                                 if (!g) continue;
                                 const std::vector<double>& x = side == 0 ? av : bv;
                                 const std::vector<double>& y = side == 0 ? bv : av;
                                 const std::vector<double>& sxx = side == 0 ? saa : sbb;
                                 for (std::size_t i = 0; i < r; ++i) {
                                   const double dc = self.grad[i], cos = self.data[i];
                                   const double inv = 1.0 / std::sqrt(saa[i] * sbb[i]);
                                   for (std::size_t j = 0; j < c; ++j)
                                     g[i * c + j] += dc * (y[i * c + j] * inv - cos * x[i * c + j] / sxx[i]);
                                 }
                               }
                             });
}

inline Tensor cosine_similarity(const Tensor& u, const Tensor& v) {
  detail::require_same_shape(u, v, "cosine_similarity");
  const Shape flat{1, u.numel()};
  return sum(row_cosine(u.reshape(flat), v.reshape(flat)));
}

// ---------------------------------------------------------------------------
// Attention

// Multi-head scaled dot-product attention over `blocks` independent groups:
// q is [blocks*Sq x d], k is [blocks*Sk x d], v is [blocks*Sk x dv]. Rows of
// block b of q attend only to rows of block b of k/v. Head h uses columns
// [h*d/heads, (h+1)*d/heads) of q/k and the matching slice of v. Scores are
// scaled by 1/sqrt(d/heads).
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads = 1,
                        std::size_t blocks = 1) {
  detail::require_matrix(q, "attention");
  detail::require_matrix(k, "attention");
  detail::require_matrix(v, "attention");
  const std::size_t d = q.cols(), dv = v.cols();
  if (k.cols() != d)
    throw DimensionError("attention: query width " + shape_str(q.shape()) + " differs from key width " +
                         shape_str(k.shape()));
  if (k.rows() != v.rows())
    throw DimensionError("attention: keys " + shape_str(k.shape()) + " and values " + shape_str(v.shape()) +
                         " differ in length");
  if (heads == 0 || d % heads != 0 || dv % heads != 0)
    throw DimensionError("attention: widths not divisible by head count " + std::to_string(heads));
  if (blocks == 0 || q.rows() % blocks != 0 || k.rows() % blocks != 0)
    throw DimensionError("attention: rows not divisible into " + std::to_string(blocks) + " blocks");
  const std::size_t sq = q.rows() / blocks, sk = k.rows() / blocks;
  const std::size_t dh = d / heads, dvh = dv / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<double> probs(blocks * heads * sq * sk);
  std::vector<double> out(q.rows() * dv, 0.0);
  const double* qd = q.data().data();
  const double* kd = k.data().data();
  const double* vd = v.data().data();
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < sq; ++i) {
        double* p = probs.data() + ((b * heads + h) * sq + i) * sk;
        const double* qi = qd + (b * sq + i) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < sk; ++j) {
          const double* kj = kd + (b * sk + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          p[j] = s * sc;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < sk; ++j) z += p[j] = std::exp(p[j] - mx);
        double* oi = out.data() + (b * sq + i) * dv + h * dvh;
        for (std::size_t j = 0; j < sk; ++j) {
          p[j] /= z;
          const double* vj = vd + (b * sk + j) * dv + h * dvh;
          for (std::size_t t = 0; t < dvh; ++t) oi[t] += p[j] * vj[t];
        }
      }

  return Tensor::make_result(
      {q.rows(), dv}, std::move(out), {q, k, v}, "attention",
      [probs = std::move(probs), blocks, heads, sq, sk, d, dv, dh, dvh, sc](detail::Node& self) {
        const double* qd = self.parents[0]->data.data();
        const double* kd = self.parents[1]->data.data();
        const double* vd = self.parents[2]->data.data();
        double* gq = grad_target(self, 0);
        double* gk = grad_target(self, 1);
        double* gv = grad_target(self, 2);
        std::vector<double> ds(sk);
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < sq; ++i) {
              const double* p = probs.data() + ((b * heads + h) * sq + i) * sk;
              const double* doi = self.grad.data() + (b * sq + i) * dv + h * dvh;
              double inner = 0.0;
              for (std::size_t j = 0; j < sk; ++j) {
                const double* vj = vd + (b * sk + j) * dv + h * dvh;
                double dp = 0.0;
                for (std::size_t t = 0; t < dvh; ++t) dp += doi[t] * vj[t];
                ds[j] = dp;
                inner += p[j] * dp;
                if (gv) {
                  double* gvj = gv + (b * sk + j) * dv + h * dvh;
                  for (std::size_t t = 0; t < dvh; ++t) gvj[t] += p[j] * doi[t];
                }
              }
              for (std::size_t j = 0; j < sk; ++j) ds[j] = p[j] * (ds[j] - inner) * sc;
              const double* qi = qd + (b * sq + i) * d + h * dh;
              double* gqi = gq ? gq + (b * sq + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < sk; ++j) {
                const double* kj = kd + (b * sk + j) * d + h * dh;
                if (gqi)
                  for (std::size_t t = 0; t < dh; ++t) gqi[t] += ds[j] * kj[t];
                if (gk) {
                  double* gkj = gk + (b * sk + j) * d + h * dh;
                  for (std::size_t t = 0; t < dh; ++t) gkj[t] += ds[j] * qi[t];
                }
              }
            }
      });
}

}  // namespace hicropl
