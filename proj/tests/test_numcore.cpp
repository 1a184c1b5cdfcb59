// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "hicropl/numcore/grad_check.hpp"
#include "hicropl/numcore/nn.hpp"
#include "oracles.hpp"

using namespace hicropl;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0, bool requires_grad = true) {
  std::normal_distribution<double> nd(0.0, scale);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = nd(rng);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  auto eye = Tensor::matrix({{1, 0}, {0, 1}});
  auto m = Tensor::matrix({{0.3, -1.5}, {2.25, 7.0}});
  auto out = matmul(eye, m);
  EXPECT_EQ(oracle::to_vec(out), oracle::to_vec(m));
}

TEST(Matmul, HandArithmetic) {
  auto out = matmul(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::matrix({{5}, {6}}));
  EXPECT_EQ(out.shape(), (Shape{2, 1}));
  EXPECT_EQ(out.at(0, 0), 17.0);
  EXPECT_EQ(out.at(1, 0), 39.0);
}

TEST(Matmul, MatchesTripleLoopExactly) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = oracle::random_mat(3, 4, rng), b = oracle::random_mat(4, 2, rng);
    auto out = matmul(oracle::to_tensor(a), oracle::to_tensor(b));
    EXPECT_EQ(oracle::to_mat(out), oracle::matmul(a, b));
  }
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    std::string what = e.what();
    EXPECT_NE(what.find("[2x3] x [2x3]"), std::string::npos) << what;
  }
}

TEST(Softmax, EqualEntriesAreUniform) {
  for (double t : {0.01, 1.0, 5.0}) {
    auto y = softmax(Tensor::vector({2.0, 2.0, 2.0, 2.0}), t);
    for (double p : y.data()) EXPECT_DOUBLE_EQ(p, 0.25);
  }
}

TEST(Softmax, LowTemperatureSaturates) {
  auto y = softmax(Tensor::vector({1.0, 0.0}), 0.01);
  EXPECT_NEAR(y[0], 1.0, 1e-40);
  EXPECT_NEAR(y[1], std::exp(-100.0), 1e-50);
}

TEST(Softmax, MatchesUnstabilizedOracle) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = oracle::random_mat(1, 5, rng, 3.0)[0];
    const double t = 0.5 + trial % 3;
    auto y = softmax(Tensor::vector(x), t);
    auto ref = oracle::softmax(x, t);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-9);
  }
}

TEST(Softmax, RowsSumToOneProperty) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  std::uniform_real_distribution<double> scale(0.01, 200.0);
  for (int trial = 0; trial < 500; ++trial) {
    auto x = random_tensor({3, len(rng)}, rng, scale(rng), false);
    auto y = softmax(x, 0.01 + trial % 7);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) {
        EXPECT_GE(y.at(r, c), 0.0);
        s += y.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Softmax, RejectsNaNAndBadTemperature) {
  EXPECT_THROW(softmax(Tensor::vector({1.0, std::nan("")})), NumericError);
  EXPECT_THROW(softmax(Tensor::vector({1.0, 2.0}), 0.0), ContractError);
}

TEST(LayerNorm, ConstantInputGivesZeros) {
  auto y = layer_norm(Tensor::vector({3.0, 3.0, 3.0}), Tensor::filled({3}, 1.0), Tensor::zeros({3}));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, ZeroGainYieldsBias) {
  auto bias = Tensor::vector({0.5, -1.0, 2.0});
  auto y = layer_norm(Tensor::vector({1.0, 7.0, -2.0}), Tensor::zeros({3}), bias);
  EXPECT_EQ(oracle::to_vec(y), oracle::to_vec(bias));
}

TEST(LayerNorm, MatchesTwoPassOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    auto x = oracle::random_mat(1, 9, rng, 4.0)[0];
    auto g = oracle::random_mat(1, 9, rng)[0];
    auto b = oracle::random_mat(1, 9, rng)[0];
    auto y = layer_norm(Tensor::vector(x), Tensor::vector(g), Tensor::vector(b));
    auto ref = oracle::layer_norm(x, g, b);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-9);
  }
}

TEST(LayerNorm, UnitGainHasZeroMeanUnitVariance) {
  std::mt19937_64 rng(9);
  auto x = random_tensor({1, 64}, rng, 5.0, false);
  auto y = layer_norm(x, Tensor::filled({64}, 1.0), Tensor::zeros({64}));
  double mu = 0.0, var = 0.0;
  for (double v : y.data()) mu += v;
  mu /= 64;
  for (double v : y.data()) var += (v - mu) * (v - mu);
  var /= 64;
  EXPECT_NEAR(mu, 0.0, 1e-5);
  EXPECT_NEAR(var, 1.0, 1e-5);
}

TEST(Gelu, ZeroAndAsymptote) {
  EXPECT_EQ(gelu(Tensor::scalar(0.0)).item(), 0.0);
  EXPECT_NEAR(gelu(Tensor::scalar(10.0)).item(), 10.0, 1e-12);
}

TEST(Gelu, MatchesQuadratureCdf) {
  for (double x : {1.0, -0.7, 2.5}) EXPECT_NEAR(gelu(Tensor::scalar(x)).item(), oracle::gelu(x), 1e-6);
}

TEST(Cosine, ParallelAndAntiParallel) {
  auto u = Tensor::vector({1.0, -2.0, 0.5});
  EXPECT_EQ(cosine_similarity(u, u).item(), 1.0);
  EXPECT_EQ(cosine_similarity(u, scale(u, -1.0)).item(), -1.0);
}

TEST(Cosine, MatchesDotProductOracle) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    auto a = oracle::random_mat(1, 7, rng)[0], b = oracle::random_mat(1, 7, rng)[0];
    EXPECT_NEAR(cosine_similarity(Tensor::vector(a), Tensor::vector(b)).item(), oracle::cosine(a, b), 1e-9);
  }
}

TEST(Cosine, ZeroVectorIsAnError) {
  EXPECT_THROW(cosine_similarity(Tensor::zeros({3}), Tensor::vector({1, 2, 3})), DegenerateVectorError);
}

TEST(Attention, MatchesNaiveLoops) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t heads = 1 + trial % 2, blocks = 1 + trial % 3;
    const std::size_t sq = 1 + trial % 4, sk = 1 + (trial / 3) % 5, d = 2 * heads * (1 + trial % 3);
    auto q = oracle::random_mat(blocks * sq, d, rng), k = oracle::random_mat(blocks * sk, d, rng);
    auto v = oracle::random_mat(blocks * sk, heads * 3, rng);
    auto out = attention(oracle::to_tensor(q), oracle::to_tensor(k), oracle::to_tensor(v), heads, blocks);
    EXPECT_LE(oracle::max_abs_diff(oracle::to_mat(out), oracle::attention(q, k, v, heads, blocks)), 1e-9);
  }
}

TEST(Attention, RejectsWidthMismatch) {
  EXPECT_THROW(attention(Tensor::zeros({2, 4}), Tensor::zeros({3, 6}), Tensor::zeros({3, 4})), DimensionError);
  EXPECT_THROW(attention(Tensor::zeros({2, 4}), Tensor::zeros({3, 4}), Tensor::zeros({2, 4})), DimensionError);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::vector({1.0, 2.0, 3.0}, true);
  backward(sum(x));
  for (double g : x.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, DotWithSelfGivesTwiceInput) {
  auto x = Tensor::vector({1.5, -2.0, 0.25}, true);
  backward(dot(x, x));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(x.grad()[i], 2.0 * x[i]);
}

TEST(Backward, NonScalarLossIsContractError) {
  auto x = Tensor::vector({1.0, 2.0}, true);
  EXPECT_THROW(backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, FanOutAccumulatesExactlyTwice) {
  std::mt19937_64 rng(21);
  auto x = random_tensor({3, 4}, rng);
  auto w = random_tensor({4, 2}, rng, 1.0, false);
  auto g = [&] { return sum(gelu(matmul(x, w))); };
  backward(g());
  std::vector<double> single(x.grad().begin(), x.grad().end());
  x.zero_grad();
  auto shared = gelu(matmul(x, w));
  backward(add(sum(shared), sum(shared)));
  for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(x.grad()[i], 2.0 * single[i]);
}

TEST(Backward, RepeatedBackwardAccumulatesIntoLeaves) {
  auto x = Tensor::vector({1.0, 2.0}, true);
  auto loss = sum(square(x));
  backward(loss);
  backward(loss);
  EXPECT_EQ(x.grad()[0], 4.0);
  EXPECT_EQ(x.grad()[1], 8.0);
}

TEST(GradCheck, LinearMapIsExact) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({2, 3}, rng);
  auto w = random_tensor({3, 4}, rng);
  EXPECT_LT(grad_check([&] { return sum(matmul(x, w)); }, {x, w}), 1e-8);
}

TEST(GradCheck, SoftmaxOfMatmul) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 5}, rng);
  auto w = random_tensor({5, 4}, rng);
  auto target = random_tensor({3, 4}, rng, 1.0, false);
  EXPECT_LT(grad_check([&] { return sum(mul(softmax(matmul(x, w), 0.7), target)); }, {x, w}), 1e-4);
}

TEST(GradCheck, DetectsWrongGradientRule) {
  std::mt19937_64 rng(8);
  auto x = random_tensor({4}, rng);
  // d/dx sin(x) deliberately reported as sin(x).
  auto bad_sin = [](const Tensor& a) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sin(a[i]);
    return Tensor::make_result(a.shape(), out, {a}, "bad_sin", [](detail::Node& self) {
      if (double* g = grad_target(self, 0))
        for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * std::sin(self.parents[0]->data[i]);
    });
  };
  EXPECT_GT(grad_check([&] { return sum(bad_sin(x)); }, {x}), 1e-2);
}

TEST(GradCheck, RejectsEpsOutsideRangeAndNonFinite) {
  auto x = Tensor::vector({1.0}, true);
  EXPECT_THROW(grad_check([&] { return sum(x); }, {x}, 1e-2), ContractError);
  auto y = Tensor::vector({-1.0}, true);
  EXPECT_THROW(grad_check([&] { return sum(log(y, 0.0)); }, {y}), NumericError);
}

// Random compositions of primitives on random shapes (each axis <= 8) all
// pass the finite-difference check.
TEST(GradCheck, RandomCompositionsProperty) {
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<std::size_t> ext(1, 8);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t r = ext(rng), c = ext(rng), h = ext(rng);
    auto x = random_tensor({r, c}, rng);
    auto w = random_tensor({c, h}, rng, 0.7);
    auto g = random_tensor({h}, rng);
    auto b = random_tensor({h}, rng);
    auto k = random_tensor({r + 1, h}, rng);
    auto mix = random_tensor({r, h}, rng, 1.0, false);
    const int variant = trial % 4;
    auto f = [&]() -> Tensor {
      Tensor y = matmul(x, w);
      switch (variant) {
        case 0: y = gelu(add_row(y, b)); break;
        case 1: y = layer_norm(y, g, b); break;
        case 2: y = softmax(y, 0.5); break;
        default: y = attention(y, k, k, 1, 1); break;
      }
      return sum(mul(y, mix));
    };
    GradCheckOptions opt;
    opt.seed = static_cast<std::uint64_t>(trial);
    auto res = grad_check_detailed(f, {x, w, g, b, k}, opt);
    EXPECT_LT(res.max_rel_error, 1e-4) << "variant " << variant << " shape " << r << "x" << c << "x" << h;
  }
}

TEST(GradCheck, RowOpsAndCosine) {
  std::mt19937_64 rng(77);
  auto a = random_tensor({3, 5}, rng);
  auto b = random_tensor({3, 5}, rng);
  auto p = random_tensor({2, 5}, rng);
  auto f = [&] {
    auto x = replace_block_prefix(concat_rows({a, b}), p, 2);
    auto s = slice_rows(gather_rows(x, {0, kZeroRow, 4, 5, 1, 2}), 2, 4);
    return add(sum(row_cosine(s, slice_rows(x, 0, 4))), mean(abs(sub(a, b))));
  };
  EXPECT_LT(grad_check(f, {a, b, p}), 1e-4);
}

TEST(CrossEntropy, MatchesLogSoftmaxAndGradChecks) {
  std::mt19937_64 rng(31);
  auto logits = random_tensor({4, 3}, rng, 2.0);
  std::vector<std::size_t> labels{0, 2, 1, 1};
  auto ce = cross_entropy_logits(logits, labels);
  double ref = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    auto row = oracle::softmax({logits.at(i, 0), logits.at(i, 1), logits.at(i, 2)});
    ref -= std::log(row[labels[i]]);
  }
  EXPECT_NEAR(ce.item(), ref / 4, 1e-12);
  EXPECT_LT(grad_check([&] { return cross_entropy_logits(logits, labels); }, {logits}), 1e-4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = Tensor::vector({1.0, -1.0}, true);
  Adam opt({{"p", p}}, AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  backward(sum(mul(p, Tensor::vector({3.0, -0.5}))));
  opt.step();
  EXPECT_NEAR(p[0], 0.9, 1e-8);
  EXPECT_NEAR(p[1], -0.9, 1e-8);
}
