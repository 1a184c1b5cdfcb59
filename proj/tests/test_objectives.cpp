// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "hicropl/harness/templates.hpp"
#include "hicropl/numcore/grad_check.hpp"
#include "hicropl/objectives/objectives.hpp"
#include "hicropl/promptflow/flow.hpp"
#include "oracles.hpp"

using namespace hicropl;
using oracle::Mat;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  return oracle::random_mat(1, n, rng, scale)[0];
}

Tensor vec_tensor(const std::vector<double>& v, bool requires_grad = false) {
  return Tensor::from({v.size()}, v, requires_grad);
}

std::vector<double> plus(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  return out;
}

std::vector<double> scaled(const std::vector<double>& a, double s) {
  std::vector<double> out(a);
  for (auto& x : out) x *= s;
  return out;
}

// 2 - cos(V + Vp, Vp) - cos(W + Wp, Wp) by explicit dot products.
double cons_oracle(const std::vector<double>& v, const std::vector<double>& vp, const std::vector<double>& w,
                   const std::vector<double>& wp) {
  return 2.0 - oracle::cosine(plus(v, vp), vp) - oracle::cosine(plus(w, wp), wp);
}

}  // namespace

TEST(Predict, IdenticalClassesGiveUniform) {
  std::mt19937_64 rng(1);
  auto row = random_vec(6, rng);
  auto probs = oracle::to_vec(predict(vec_tensor(random_vec(6, rng)), oracle::to_tensor(Mat(5, row))));
  for (double p : probs) EXPECT_NEAR(p, 0.2, 1e-12);
}

TEST(Predict, MatchingOrthogonalClassIsConfident) {
  Mat classes{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  auto probs = oracle::to_vec(predict(vec_tensor({0, 1, 0}), oracle::to_tensor(classes), 0.01));
  const double expected = std::exp(100.0) / (std::exp(100.0) + 2.0);
  EXPECT_GT(probs[1], 0.999);
  EXPECT_NEAR(probs[1], expected, 1e-12);
}

TEST(Predict, MatchesSimilaritySoftmaxOracle) {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_vec(7, rng);
    auto classes = oracle::random_mat(5, 7, rng);
    const double tau = 0.05 + 0.5 * (trial % 4);
    std::vector<double> logits;
    for (const auto& c : classes) logits.push_back(oracle::cosine(v, c));
    auto expected = oracle::softmax(logits, tau);
    auto got = oracle::to_vec(predict(vec_tensor(v), oracle::to_tensor(classes), tau));
    worst = std::max(worst, oracle::max_abs_diff({got}, {expected}));
    double total = 0.0;
    for (double p : got) total += p;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Predict, InvariantToPositiveRescaling) {
  std::mt19937_64 rng(3);
  auto v = random_vec(7, rng);
  auto classes = oracle::random_mat(4, 7, rng);
  auto base = oracle::to_vec(predict(vec_tensor(v), oracle::to_tensor(classes)));
  auto rescaled_classes = classes;
  rescaled_classes[2] = scaled(classes[2], 37.5);
  auto a = oracle::to_vec(predict(vec_tensor(scaled(v, 0.003)), oracle::to_tensor(classes)));
  auto b = oracle::to_vec(predict(vec_tensor(v), oracle::to_tensor(rescaled_classes)));
  EXPECT_LE(oracle::max_abs_diff({a}, {base}), 1e-9);
  EXPECT_LE(oracle::max_abs_diff({b}, {base}), 1e-9);
}

TEST(Predict, ZeroNormIsDegenerate) {
  Mat classes{{1, 0}, {0, 1}};
  EXPECT_THROW(predict(vec_tensor({0, 0}), oracle::to_tensor(classes)), DegenerateVectorError);
  EXPECT_THROW(predict(vec_tensor({1, 0}), oracle::to_tensor(Mat{{1, 0}, {0, 0}})), DegenerateVectorError);
}

TEST(CeLoss, CertainLabelIsZero) {
  EXPECT_EQ(ce_loss(vec_tensor({0, 1, 0}), 1).loss.item(), 0.0);
}

TEST(CeLoss, UniformOverFourIsLnFour) {
  for (std::size_t label = 0; label < 4; ++label)
    EXPECT_NEAR(ce_loss(vec_tensor({0.25, 0.25, 0.25, 0.25}), label).loss.item(), std::log(4.0), 1e-15);
}

TEST(CeLoss, RandomSimplexMatchesNegLog) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> ud(0.01, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(6);
    double total = 0.0;
    for (auto& x : p) total += (x = ud(rng));
    for (auto& x : p) x /= total;
    const std::size_t label = trial % 6;
    EXPECT_NEAR(ce_loss(vec_tensor(p), label).loss.item(), -std::log(p[label]), 1e-14);
  }
}

TEST(CeLoss, ZeroProbabilityClampsAndFlags) {
  auto r = ce_loss(vec_tensor({1.0, 0.0}), 1);
  EXPECT_TRUE(r.clamped);
  EXPECT_NEAR(r.loss.item(), -std::log(1e-12), 1e-9);
  EXPECT_FALSE(ce_loss(vec_tensor({0.5, 0.5}), 1).clamped);
  EXPECT_THROW(ce_loss(vec_tensor({0.5, 0.5}), 2), DimensionError);
}

TEST(Consistency, ZeroTeacherCollapsesToSelfSimilarity) {
  std::mt19937_64 rng(5);
  auto vp = random_vec(8, rng), wp = random_vec(8, rng);
  auto loss = consistency_loss(vec_tensor(std::vector<double>(8, 0.0)), vec_tensor(vp),
                               vec_tensor(std::vector<double>(8, 0.0)), vec_tensor(wp));
  EXPECT_EQ(loss.item(), 0.0);
}

TEST(Consistency, AntiParallelTeacherGivesMaximumFour) {
  std::mt19937_64 rng(6);
  auto vp = random_vec(8, rng), wp = random_vec(8, rng);
  auto loss = consistency_loss(vec_tensor(scaled(vp, -2.0)), vec_tensor(vp), vec_tensor(scaled(wp, -2.0)), vec_tensor(wp));
  EXPECT_EQ(loss.item(), 4.0);
}

TEST(Consistency, RandomQuadruplesMatchOracleAndStayInRange) {
  std::mt19937_64 rng(7);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const double s = trial % 2 ? 3.0 : 0.2;
    auto v = random_vec(6, rng, s), vp = random_vec(6, rng), w = random_vec(6, rng, s), wp = random_vec(6, rng);
    const double got = consistency_loss(vec_tensor(v), vec_tensor(vp), vec_tensor(w), vec_tensor(wp)).item();
    worst = std::max(worst, std::fabs(got - cons_oracle(v, vp, w, wp)));
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 4.0);
  }
  EXPECT_LE(worst, 1e-9);
}

TEST(Consistency, LiteralSumDiffersFromPlainCosine) {
  std::vector<double> v{1, 0}, vp{0, 1};
  const double literal = consistency_loss(vec_tensor(v), vec_tensor(vp), vec_tensor(vp), vec_tensor(vp)).item();
  EXPECT_NEAR(literal, 1.0 - 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Consistency, DegenerateSumIsError) {
  EXPECT_THROW(consistency_loss(vec_tensor({1, 0}), vec_tensor({-1, 0}), vec_tensor({0, 1}), vec_tensor({0, 1})),
               DegenerateVectorError);
}

TEST(Consistency, BatchedRowsAverageEachCosine) {
  std::mt19937_64 rng(8);
  auto v = oracle::random_mat(3, 5, rng), vp = oracle::random_mat(3, 5, rng);
  auto w = oracle::random_mat(4, 5, rng), wp = oracle::random_mat(4, 5, rng);
  double img = 0.0, txt = 0.0;
  for (int i = 0; i < 3; ++i) img += oracle::cosine(plus(v[i], vp[i]), vp[i]) / 3.0;
  for (int i = 0; i < 4; ++i) txt += oracle::cosine(plus(w[i], wp[i]), wp[i]) / 4.0;
  auto got = consistency_loss(oracle::to_tensor(v), oracle::to_tensor(vp), oracle::to_tensor(w), oracle::to_tensor(wp));
  EXPECT_NEAR(got.item(), 2.0 - img - txt, 1e-12);
}

TEST(Consistency, DistanceCriteria) {
  std::vector<double> v{1, 2}, vp{2, 0}, w{0, 0}, wp{1, 1};
  auto l1 = consistency_loss(vec_tensor(v), vec_tensor(vp), vec_tensor(w), vec_tensor(wp), ConsistencyCriterion::kL1);
  auto mse = consistency_loss(vec_tensor(v), vec_tensor(vp), vec_tensor(w), vec_tensor(wp), ConsistencyCriterion::kMse);
  EXPECT_NEAR(l1.item(), (1.0 + 2.0) / 2 + (1.0 + 1.0) / 2, 1e-15);
  EXPECT_NEAR(mse.item(), (1.0 + 4.0) / 2 + (1.0 + 1.0) / 2, 1e-15);
  for (auto c : {ConsistencyCriterion::kCosine, ConsistencyCriterion::kL1, ConsistencyCriterion::kMse})
    EXPECT_EQ(parse_criterion(criterion_name(c)), c);
  EXPECT_THROW(parse_criterion("kl"), ConfigError);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_EQ(total_loss(1.0, 0.25, 12.0).total, 4.0);
  EXPECT_EQ(total_loss(0.7, 3.1, 0.0).total, 0.7);
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> ud(0.0, 4.0);
  for (int i = 0; i < 100; ++i) {
    const double ce = ud(rng), cons = ud(rng), lambda = 3 * ud(rng), s = 0.5 + ud(rng);
    const auto b = total_loss(ce, cons, lambda);
    EXPECT_NEAR(b.total, b.ce + b.lambda * b.cons, 1e-12);
    EXPECT_NEAR(total_loss(ce, cons * s, lambda / s).total, b.total, 1e-12);
  }
  EXPECT_THROW(total_loss(1.0, 1.0, -1.0), ContractError);
}

TEST(TotalLoss, GraphFormIsLinearInLambda) {
  auto ce = Tensor::from({1}, {0.8}, true);
  auto cons = Tensor::from({1}, {0.3}, true);
  EXPECT_EQ(total_loss(ce, cons, 0.0).item(), 0.8);
  const double h = 1e-3;
  const double slope = (total_loss(ce, cons, 5.0 + h).item() - total_loss(ce, cons, 5.0 - h).item()) / (2 * h);
  EXPECT_NEAR(slope, 0.3, 1e-9);
  backward(total_loss(ce, cons, 12.0));
  EXPECT_EQ(ce.grad()[0], 1.0);
  EXPECT_EQ(cons.grad()[0], 12.0);
}

TEST(Templates, FormatAndErrors) {
  EXPECT_EQ(format_template("a photo of a {}", "red square"), "a photo of a red square");
  EXPECT_THROW(format_template("a photo", "x"), TemplateError);
  EXPECT_THROW(format_template("{} and {}", "x"), TemplateError);
  std::istringstream bad("# only a comment\n");
  EXPECT_THROW(parse_templates(bad), TemplateError);
}

TEST(Templates, ShippedFileMatchesBuiltIn) {
  EXPECT_EQ(load_templates(std::string(HICROPL_DATA_DIR) + "/templates.txt"), default_templates());
}

TEST(Teacher, EnsembleIsNormalizedArithmeticMean) {
  DualEncoder enc(EncoderConfig{}, 4);
  const std::vector<std::string> names{"red square", "blue circle"};
  const std::vector<std::string> templates{"a photo of a {}", "this is a {}", "a small {} shape"};
  auto table = oracle::to_mat(teacher_text_embeddings(names, templates, enc.text(), default_vocab()));
  for (std::size_t c = 0; c < names.size(); ++c) {
    std::vector<double> mean(enc.config().joint_width, 0.0);
    for (const auto& t : templates) {
      auto e = oracle::to_vec(
          enc.text().encode_one(tokenize(format_template(t, names[c]), default_vocab(), enc.config().max_text_len)));
      for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += e[j];
    }
    const double n = std::sqrt(oracle::dot(mean, mean));
    for (std::size_t j = 0; j < mean.size(); ++j) EXPECT_NEAR(table[c][j], mean[j] / n, 1e-12);
  }
}

TEST(Teacher, SingleAndDuplicatedTemplatesAgree) {
  DualEncoder enc(EncoderConfig{}, 4);
  const std::vector<std::string> names{"green triangle"};
  auto one = teacher_text_embeddings(names, {"a drawing of a {}"}, enc.text(), default_vocab());
  auto dup = teacher_text_embeddings(names, {"a drawing of a {}", "a drawing of a {}"}, enc.text(), default_vocab());
  EXPECT_LE(oracle::max_abs_diff(oracle::to_mat(one), oracle::to_mat(dup)), 1e-15);
  auto direct = oracle::to_vec(normalize_rows(
      enc.text().encode({tokenize("a drawing of a green triangle", default_vocab(), enc.config().max_text_len)})));
  EXPECT_LE(oracle::max_abs_diff({oracle::to_vec(one)}, {direct}), 1e-15);
  EXPECT_THROW(teacher_text_embeddings(names, {"no slot"}, enc.text(), default_vocab()), TemplateError);
  EXPECT_THROW(teacher_text_embeddings(names, {}, enc.text(), default_vocab()), TemplateError);
}

TEST(Teacher, ImageEmbeddingIsThePromptFreePath) {
  DualEncoder enc(EncoderConfig{}, 4);
  enc.freeze();
  const auto& c = enc.config();
  std::mt19937_64 rng(10);
  Image img{c.image_size, c.image_size, c.channels, std::vector<double>(c.image_size * c.image_size * c.channels)};
  for (auto& v : img.pixels) v = std::uniform_real_distribution<double>(0, 1)(rng);
  auto first = oracle::to_vec(teacher_image_embedding(img, enc.vision()));
  PromptLearner learner(c, FlowConfig{}, 4, 1);
  for (auto [name, t] : learner.params())
    for (auto& x : t.mutable_data()) x += 1.0;
  EXPECT_EQ(oracle::to_vec(teacher_image_embedding(img, enc.vision())), first);
  EXPECT_EQ(oracle::to_vec(enc.vision().encode_image(enc.vision().embed_patches(img))), first);
}

TEST(Objective, FullLossPassesGradCheck) {
  EncoderConfig c;
  c.layers = 2;
  c.text_width = 8;
  c.vision_width = 8;
  c.joint_width = 6;
  c.prompt_len = 2;
  DualEncoder enc(c, 3);
  enc.freeze();
  PromptLearner learner(c, FlowConfig{}, 1, 2);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> nd(0.0, 0.3);
  for (auto [name, t] : learner.params())
    for (auto& x : t.mutable_data()) x += nd(rng);

  const std::vector<std::string> names{"red square", "blue circle", "green triangle"};
  std::vector<TokenSequence> seqs;
  for (const auto& n : names) seqs.push_back(tokenize(n, default_vocab(), c.max_text_len));
  auto frozen_text = teacher_text_embeddings(names, {"a photo of a {}", "this is a {}"}, enc.text(), default_vocab());
  std::vector<Image> imgs;
  for (int i = 0; i < 2; ++i) {
    Image img{c.image_size, c.image_size, c.channels, std::vector<double>(c.image_size * c.image_size * c.channels)};
    for (auto& v : img.pixels) v = std::uniform_real_distribution<double>(0, 1)(rng);
    imgs.push_back(img);
  }
  auto frozen_img = enc.vision().encode({&imgs[0], &imgs[1]}).detach();
  const std::vector<std::size_t> labels{0, 2};

  std::vector<Tensor> inputs;
  for (const auto& [name, t] : learner.params()) inputs.push_back(t);
  GradCheckOptions options;
  options.max_probes_per_input = 5;
  auto result = grad_check_detailed(
      [&] {
        auto eff = learner.materialize();
        auto wp = enc.text().encode(seqs, &eff.text);
        auto vp = enc.vision().encode({&imgs[0], &imgs[1]}, &eff.visual);
        auto probs = softmax(similarity_logits(vp, wp, 0.5), 1.0);
        Tensor ce = add(ce_loss(slice_rows(probs, 0, 1), labels[0]).loss, ce_loss(slice_rows(probs, 1, 1), labels[1]).loss);
        auto cons = consistency_loss(normalize_rows(frozen_img), normalize_rows(vp), frozen_text, normalize_rows(wp));
        return total_loss(scale(ce, 0.5), cons, 2.0);
      },
      inputs, options);
  EXPECT_LT(result.max_rel_error, 1e-4) << "input " << result.worst_input << " analytic " << result.worst_analytic
                                        << " numeric " << result.worst_numeric;
}
