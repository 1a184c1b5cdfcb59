// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hicropl/numcore/ops.hpp"

namespace hicropl {

// Ordered, named view of a module's parameters. Handles share storage with
// the module, so updates through the list are visible to the module.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

inline void append_params(ParamList& out, const ParamList& more) { out.insert(out.end(), more.begin(), more.end()); }

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double normal(double mean = 0.0, double stddev = 1.0) { return std::normal_distribution<double>(mean, stddev)(engine_); }
  double uniform(double lo = 0.0, double hi = 1.0) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
  std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

inline constexpr double kInitStd = 0.02;

inline Tensor normal_tensor(Shape shape, Rng& rng, double stddev = kInitStd) {
  auto t = Tensor::zeros(std::move(shape), true);
  for (auto& x : t.mutable_data()) x = rng.normal(0.0, stddev);
  return t;
}

struct Linear {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out], undefined when bias-free

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(normal_tensor({in, out}, rng)), bias(with_bias ? Tensor::zeros({out}, true) : Tensor()) {}

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add_row(y, bias) : y;
  }

  ParamList params(const std::string& prefix) const {
    ParamList out{{prefix + ".weight", weight}};
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
    return out;
  }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = kLayerNormEps;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width) : gain(Tensor::filled({width}, 1.0, true)), bias(Tensor::zeros({width}, true)) {}

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

  ParamList params(const std::string& prefix) const { return {{prefix + ".gain", gain}, {prefix + ".bias", bias}}; }
};

// Two-layer position-wise network: W2 GELU(W1 x + b1) + b2.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, Rng& rng) : fc1(width, hidden, rng), fc2(hidden, width, rng) {}
  FeedForward(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

  ParamList params(const std::string& prefix) const {
    auto out = fc1.params(prefix + ".fc1");
    append_params(out, fc2.params(prefix + ".fc2"));
    return out;
  }
};

struct MultiHeadAttention {
  Linear q, k, v, o;
  std::size_t heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads_, Rng& rng)
      : q(width, width, rng), k(width, width, rng), v(width, width, rng), o(width, width, rng), heads(heads_) {}

  // Self-attention within each of `blocks` consecutive row groups.
  Tensor operator()(const Tensor& x, std::size_t blocks) const {
    return o(attention(q(x), k(x), v(x), heads, blocks));
  }

  ParamList params(const std::string& prefix) const {
    auto out = q.params(prefix + ".q");
    append_params(out, k.params(prefix + ".k"));
    append_params(out, v.params(prefix + ".v"));
    append_params(out, o.params(prefix + ".o"));
    return out;
  }
};

// Pre-LN transformer block: x + Attn(LN(x)), then + FFN(LN(.)).
struct TransformerBlock {
  LayerNorm ln1;
  MultiHeadAttention attn;
  LayerNorm ln2;
  FeedForward mlp;

  TransformerBlock() = default;
  TransformerBlock(std::size_t width, std::size_t heads, Rng& rng)
      : ln1(width), attn(width, heads, rng), ln2(width), mlp(width, 4 * width, rng) {}

  Tensor operator()(const Tensor& x, std::size_t blocks) const {
    Tensor h = add(x, attn(ln1(x), blocks));
    return add(h, mlp(ln2(h)));
  }

  ParamList params(const std::string& prefix) const {
    auto out = ln1.params(prefix + ".ln1");
    append_params(out, attn.params(prefix + ".attn"));
    append_params(out, ln2.params(prefix + ".ln2"));
    append_params(out, mlp.params(prefix + ".mlp"));
    return out;
  }
};

struct AdamOptions {
  double lr = 0.0025;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(ParamList params, AdamOptions options) : params_(std::move(params)), options_(options) {
    for (auto& [name, t] : params_) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

  void step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(steps_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
      Tensor& t = params_[p].second;
      if (!t.has_grad()) continue;
      auto values = t.mutable_data();
      auto grads = t.grad();
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = grads[i] + options_.weight_decay * values[i];
        m_[p][i] = options_.beta1 * m_[p][i] + (1.0 - options_.beta1) * g;
        v_[p][i] = options_.beta2 * v_[p][i] + (1.0 - options_.beta2) * g * g;
        const double mhat = m_[p][i] / bc1;
        const double vhat = v_[p][i] / bc2;
        values[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
      }
    }
  }

  std::size_t steps() const { return steps_; }

 private:
  ParamList params_;
  AdamOptions options_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t steps_ = 0;
};

inline void set_requires_grad(const ParamList& params, bool flag) {
  for (const auto& entry : params) {
    Tensor handle = entry.second;
    handle.set_requires_grad(flag);
  }
}

}  // namespace hicropl
