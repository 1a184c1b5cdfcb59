// SPDX-License-Identifier: Apache-2.0
//
// Independent loop-based reference computations used by the tests. Nothing
// here calls into the library's math; only plain vectors go in and out.
#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <vector>

#include "hicropl/numcore/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const hicropl::Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t.at(i, j);
  return m;
}

inline std::vector<double> to_vec(const hicropl::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline Mat random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Mat m(r, std::vector<double>(c));
  for (auto& row : m)
    for (auto& x : row) x = nd(rng);
  return m;
}

inline hicropl::Tensor to_tensor(const Mat& m, bool requires_grad = false) {
  std::vector<double> v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return hicropl::Tensor::from({m.size(), m[0].size()}, std::move(v), requires_grad);
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) acc += a[i][k] * b[k][j];
      c[i][j] = acc;
    }
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] += b[i][j];
  return c;
}

inline Mat add_row(const Mat& a, const std::vector<double>& r) {
  Mat c = a;
  for (auto& row : c)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += r[j];
  return c;
}

// Unstabilized softmax in extended precision: exp, sum, divide.
inline std::vector<double> softmax(const std::vector<double>& x, double temperature = 1.0) {
  std::vector<long double> e(x.size());
  long double z = 0.0L;
  for (std::size_t i = 0; i < x.size(); ++i) z += e[i] = std::exp(static_cast<long double>(x[i]) / temperature);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<double>(e[i] / z);
  return out;
}

// Two-pass statistics: mean first, then biased variance.
inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<double>& gain,
                                      const std::vector<double>& bias, double eps = 1e-5) {
  long double mu = 0.0L;
  for (double v : x) mu += v;
  mu /= x.size();
  long double var = 0.0L;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= x.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = static_cast<double>((x[i] - mu) / std::sqrt(var + eps) * gain[i] + bias[i]);
  return out;
}

inline Mat layer_norm_rows(const Mat& x, const std::vector<double>& gain, const std::vector<double>& bias) {
  Mat out;
  for (const auto& row : x) out.push_back(layer_norm(row, gain, bias));
  return out;
}

// Standard normal CDF by composite Simpson quadrature of the density.
inline double normal_cdf_quadrature(double x) {
  const double lo = -12.0;
  const int n = 200000;
  const double h = (x - lo) / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = pdf(lo) + pdf(x);
  for (int i = 1; i < n; ++i) s += pdf(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

inline double gelu(double x) { return x * normal_cdf_quadrature(x); }

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return dot(a, b) / std::sqrt(dot(a, a) * dot(b, b));
}

// Scaled dot-product attention for one block and one head:
// softmax(q k^T / sqrt(d)) v, computed row by row.
inline Mat attention_head(const Mat& q, const Mat& k, const Mat& v) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q[0].size()));
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t i = 0; i < q.size(); ++i) {
    std::vector<double> s(k.size());
    for (std::size_t j = 0; j < k.size(); ++j) s[j] = dot(q[i], k[j]) * scale;
    const auto p = softmax(s);
    for (std::size_t j = 0; j < k.size(); ++j)
      for (std::size_t t = 0; t < v[0].size(); ++t) out[i][t] += p[j] * v[j][t];
  }
  return out;
}

inline Mat columns(const Mat& a, std::size_t begin, std::size_t count) {
  Mat out(a.size(), std::vector<double>(count));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < count; ++j) out[i][j] = a[i][begin + j];
  return out;
}

inline Mat rows(const Mat& a, std::size_t begin, std::size_t count) { return Mat(a.begin() + begin, a.begin() + begin + count); }

// Multi-head, multi-block attention assembled from attention_head.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads, std::size_t blocks) {
  const std::size_t sq = q.size() / blocks, sk = k.size() / blocks;
  const std::size_t dh = q[0].size() / heads, dvh = v[0].size() / heads;
  Mat out(q.size(), std::vector<double>(v[0].size(), 0.0));
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      const Mat o = attention_head(columns(rows(q, b * sq, sq), h * dh, dh), columns(rows(k, b * sk, sk), h * dh, dh),
                                   columns(rows(v, b * sk, sk), h * dvh, dvh));
      for (std::size_t i = 0; i < sq; ++i)
        for (std::size_t t = 0; t < dvh; ++t) out[b * sq + i][h * dvh + t] = o[i][t];
    }
  return out;
}

inline double gelu_exact(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat gelu_mat(const Mat& a) {
  Mat out = a;
  for (auto& row : out)
    for (auto& x : row) x = gelu_exact(x);
  return out;
}

inline double max_abs_diff(const Mat& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::fabs(a[i][j] - b[i][j]));
  return m;
}

}  // namespace oracle
