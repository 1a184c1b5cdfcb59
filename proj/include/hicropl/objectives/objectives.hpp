// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "hicropl/encoders/towers.hpp"
#include "hicropl/numcore/ops.hpp"

namespace hicropl {

inline constexpr double kDefaultTemperature = 0.01;
inline constexpr double kProbabilityFloor = 1e-12;

// Per-class text embeddings: frozen teacher rows (W) and, for prompted runs,
// the prompted rows (W_p). Both [N x joint].
struct ClassEmbeddingTable {
  Tensor frozen;
  Tensor prompted;
};

// Cosine similarities between image rows [B x J] and class rows [N x J],
// divided by tau: [B x N].
inline Tensor similarity_logits(const Tensor& images, const Tensor& classes, double tau = kDefaultTemperature) {
  if (!(tau > 0.0)) throw ContractError("temperature must be positive");
  const Tensor v = images.rank() == 1 ? images.reshape({1, images.numel()}) : images;
  return scale(matmul(normalize_rows(v), transpose(normalize_rows(classes))), 1.0 / tau);
}

// Zero-shot prediction: softmax over cos(V, W_c) / tau.
inline Tensor predict(const Tensor& images, const Tensor& classes, double tau = kDefaultTemperature) {
  return softmax(similarity_logits(images, classes, 1.0), tau);
}

struct CeResult {
  Tensor loss;
  bool clamped = false;  // p_label fell below the floor
};

// -log p_label for one probability vector.
inline CeResult ce_loss(const Tensor& probabilities, std::size_t label) {
  if (label >= probabilities.numel())
    throw DimensionError("label " + std::to_string(label) + " outside " + std::to_string(probabilities.numel()) +
                         " classes");
  std::vector<long> pick{static_cast<long>(label)};
  const Tensor p = gather_rows(probabilities.reshape({probabilities.numel(), 1}), pick);
  CeResult out;
  out.clamped = p.item() < kProbabilityFloor;
  out.loss = neg(log(p, kProbabilityFloor)).reshape({1});
  return out;
}

enum class ConsistencyCriterion { kCosine, kL1, kMse };

inline constexpr std::string_view criterion_name(ConsistencyCriterion c) {
  switch (c) {
    case ConsistencyCriterion::kCosine: return "cosine";
    case ConsistencyCriterion::kL1: return "l1";
    case ConsistencyCriterion::kMse: return "mse";
  }
  return "?";
}

inline ConsistencyCriterion parse_criterion(std::string_view s) {
  for (auto c : {ConsistencyCriterion::kCosine, ConsistencyCriterion::kL1, ConsistencyCriterion::kMse})
    if (criterion_name(c) == s) return c;
  throw ConfigError("unknown consistency criterion '" + std::string(s) + "'");
}

namespace detail {

inline Tensor as_rows(const Tensor& t) { return t.rank() == 1 ? t.reshape({1, t.numel()}) : t; }

// One modality's term, averaged over rows.
inline Tensor consistency_term(const Tensor& frozen, const Tensor& prompted, ConsistencyCriterion criterion) {
  const Tensor f = as_rows(frozen), p = as_rows(prompted);
  if (f.shape() != p.shape())
    throw DimensionError("consistency: frozen " + shape_str(f.shape()) + " vs prompted " + shape_str(p.shape()));
  switch (criterion) {
    case ConsistencyCriterion::kCosine:
      return add_scalar(neg(mean(row_cosine(add(f, p), p))), 1.0);
    case ConsistencyCriterion::kL1:
      return mean(abs(sub(p, f)));
    case ConsistencyCriterion::kMse:
      return mean(square(sub(p, f)));
  }
  throw ConfigError("unknown consistency criterion");
}

}  // namespace detail

// 2 - cos(V + V_p, V_p) - cos(W + W_p, W_p), with the sums taken literally.
// Batched inputs average each cosine over their rows. The L1 / MSE variants
// replace each (1 - cos) term with the mean absolute / squared difference
// between the frozen and prompted embeddings.
inline Tensor consistency_loss(const Tensor& frozen_image, const Tensor& prompted_image, const Tensor& frozen_text,
                               const Tensor& prompted_text,
                               ConsistencyCriterion criterion = ConsistencyCriterion::kCosine) {
  return add(detail::consistency_term(frozen_image, prompted_image, criterion),
             detail::consistency_term(frozen_text, prompted_text, criterion));
}

struct LossBreakdown {
  double ce = 0.0;
  double cons = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

inline LossBreakdown total_loss(double ce, double cons, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
  return {ce, cons, ce + lambda * cons, lambda};
}

// Graph form of the total objective: ce + lambda * cons.
inline Tensor total_loss(const Tensor& ce, const Tensor& cons, double lambda) {
  if (!(lambda >= 0.0)) throw ContractError("lambda must be non-negative");
  return add(ce, scale(cons, lambda));
}

// Substitutes the class name for the single "{}" slot.
inline std::string format_template(std::string_view tmpl, std::string_view class_name) {
  const auto pos = tmpl.find("{}");
  if (pos == std::string_view::npos) throw TemplateError("template '" + std::string(tmpl) + "' has no {} slot");
  if (tmpl.find("{}", pos + 2) != std::string_view::npos)
    throw TemplateError("template '" + std::string(tmpl) + "' has more than one {} slot");
  std::string out(tmpl.substr(0, pos));
  out += class_name;
  out += tmpl.substr(pos + 2);
  return out;
}

// Frozen text table: per class, the mean of the prompt-free encodings of every
// template filled with the class name, then L2-normalized. [N x joint]
inline Tensor teacher_text_embeddings(const std::vector<std::string>& class_names,
                                      const std::vector<std::string>& templates, const TextEncoder& encoder,
                                      const Vocab& vocab) {
  if (templates.empty()) throw TemplateError("at least one template is required");
  if (class_names.empty()) throw DimensionError("no class names");
  const std::size_t t = templates.size();
  std::vector<TokenSequence> seqs;
  for (const auto& name : class_names)
    for (const auto& tmpl : templates)
      seqs.push_back(tokenize(format_template(tmpl, name), vocab, encoder.config().max_text_len));
  const Tensor enc = encoder.encode(seqs).detach();
  const std::size_t j = enc.cols();
  std::vector<double> means(class_names.size() * j, 0.0);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t d = 0; d < j; ++d) means[c * j + d] += enc.at(c * t + i, d);
    for (std::size_t d = 0; d < j; ++d) means[c * j + d] /= static_cast<double>(t);
  }
  return normalize_rows(Tensor::from({class_names.size(), j}, std::move(means))).detach();
}

// Frozen image embedding: the prompt-free vision path.
inline Tensor teacher_image_embedding(const Image& image, const VisionEncoder& encoder) {
  return encoder.encode_image(encoder.embed_patches(image)).detach();
}

}  // namespace hicropl
