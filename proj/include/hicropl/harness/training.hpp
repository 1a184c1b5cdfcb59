// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "hicropl/encoders/towers.hpp"
#include "hicropl/harness/protocol.hpp"
#include "hicropl/harness/templates.hpp"
#include "hicropl/objectives/objectives.hpp"
#include "hicropl/promptflow/flow.hpp"

namespace hicropl {

struct PretrainOptions {
  std::size_t epochs = 8;
  double lr = 1e-4;
  double weight_decay = 0.0;
  double tau = 0.07;
  std::uint64_t seed = 0;
};

// Trains the prompt-free dual towers with the symmetric image/caption
// contrastive loss. Each step draws one image per class and captions every
// class with a random template, so the in-batch negatives are all other
// classes. Returns the encoder frozen.
inline DualEncoder pretrain_backbone(const Dataset& data, const std::vector<std::string>& templates, const Vocab& vocab,
                                     const EncoderConfig& config, const PretrainOptions& options) {
  if (templates.empty()) throw TemplateError("pretraining needs at least one caption template");
  const std::size_t n = data.num_classes();
  std::vector<std::vector<std::size_t>> by_class(n);
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  std::size_t steps = data.size();
  for (const auto& members : by_class) {
    if (members.empty()) throw ProtocolError("pretraining data does not cover every class");
    steps = std::min(steps, members.size());
  }

  DualEncoder model(config, options.seed);
  Adam opt(model.params(), AdamOptions{options.lr, 0.9, 0.999, 1e-8, options.weight_decay});
  Rng rng(options.seed ^ 0x5851f42d4c957f2dULL);
  std::vector<std::size_t> labels(n);
  std::iota(labels.begin(), labels.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    for (auto& members : by_class) std::shuffle(members.begin(), members.end(), rng.engine());
    for (std::size_t s = 0; s < steps; ++s) {
      std::vector<const Image*> images;
      std::vector<TokenSequence> captions;
      for (std::size_t c = 0; c < n; ++c) {
        images.push_back(&data.images[by_class[c][s]]);
        const auto& tmpl = templates[rng.index(templates.size())];
        captions.push_back(tokenize(format_template(tmpl, data.class_names[c]), vocab, config.max_text_len));
      }
      const Tensor v = model.vision().encode(images);
      const Tensor w = model.text().encode(captions);
      const Tensor logits = similarity_logits(v, w, options.tau);
      const Tensor loss =
          scale(add(cross_entropy_logits(logits, labels), cross_entropy_logits(transpose(logits), labels)), 0.5);
      if (!std::isfinite(loss.item()))
        throw NumericError("pretraining loss is not finite at epoch " + std::to_string(epoch + 1) + ", step " +
                           std::to_string(s + 1));
      opt.zero_grad();
      backward(loss);
      opt.step();
    }
  }
  model.freeze();
  return model;
}

struct Hyperparams {
  double lr = 0.0025;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 5e-4;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::size_t k_shots = 16;
  double lambda = 12.0;
  std::size_t boundary_k = 4;
  std::size_t prompt_depth = 8;
  double tau = kDefaultTemperature;
  // Off trains on cross-entropy alone; the consistency value is still logged.
  bool consistency = true;
  ConsistencyCriterion criterion = ConsistencyCriterion::kCosine;
  std::uint64_t seed = 1;
};

struct EpochLoss {
  double ce = 0.0;
  double cons = 0.0;
  double total = 0.0;
};

struct TrainLog {
  double initial_ce = 0.0;  // mean CE over the training set before any update
  std::vector<EpochLoss> epochs;
};

// Constants of one prompt-learning run: the frozen teacher's embeddings of
// the base classes and of every training image.
struct TeacherCache {
  Tensor base_text;                  // [N_base x J], L2-normalized template ensemble
  std::vector<Tensor> train_images;  // parallel to the training set, each [1 x J]
};

inline std::vector<TokenSequence> tokenize_names(const std::vector<std::string>& names, const Vocab& vocab,
                                                 std::size_t max_len) {
  std::vector<TokenSequence> out;
  for (const auto& n : names) out.push_back(tokenize(n, vocab, max_len));
  return out;
}

inline TeacherCache build_teacher_cache(const DualEncoder& backbone, const Task& task,
                                        const std::vector<std::size_t>& train_set,
                                        const std::vector<std::string>& templates, const Vocab& vocab) {
  TeacherCache cache;
  cache.base_text = teacher_text_embeddings(task.names(task.base_classes), templates, backbone.text(), vocab);
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < train_set.size(); i += chunk) {
    std::vector<const Image*> imgs;
    for (std::size_t j = i; j < std::min(train_set.size(), i + chunk); ++j)
      imgs.push_back(&task.dataset->images[train_set[j]]);
    const Tensor v = backbone.vision().encode(imgs).detach();
    for (std::size_t r = 0; r < v.rows(); ++r) cache.train_images.push_back(slice_rows(v, r, 1).detach());
  }
  return cache;
}

namespace detail {

inline std::vector<std::size_t> base_local_labels(const Task& task, const std::vector<std::size_t>& samples) {
  std::vector<std::size_t> local(task.dataset->num_classes(), 0);
  for (std::size_t b = 0; b < task.base_classes.size(); ++b) local[task.base_classes[b]] = b;
  std::vector<std::size_t> out;
  for (auto s : samples) out.push_back(local[task.dataset->labels[s]]);
  return out;
}

}  // namespace detail

// Prompt learning on the few-shot training set. Only the learner's parameters
// receive gradients; the backbone must be frozen. Each step materializes the
// effective prompts once, encodes the base class names and the image batch
// through the prompted towers, and minimizes ce + lambda * cons.
inline TrainLog train(const DualEncoder& backbone, PromptLearner& learner, const Task& task,
                      const std::vector<std::size_t>& train_set, const TeacherCache& teacher, const Hyperparams& hp,
                      const Vocab& vocab) {
  if (!backbone.frozen()) throw ContractError("train: backbone must be frozen");
  if (train_set.empty()) throw ProtocolError("train: empty training set");
  if (hp.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  for (auto s : train_set)
    if (std::find(task.base_classes.begin(), task.base_classes.end(), task.dataset->labels[s]) ==
        task.base_classes.end())
      throw ProtocolError("training sample " + std::to_string(s) + " is not from a base class");

  const auto& cfg = backbone.config();
  const auto base_tokens = tokenize_names(task.names(task.base_classes), vocab, cfg.max_text_len);
  const auto labels = detail::base_local_labels(task, train_set);
  const ParamList params = learner.params();
  Adam opt(params, AdamOptions{hp.lr, hp.beta1, hp.beta2, 1e-8, hp.weight_decay});

  const auto batch_loss = [&](const std::vector<std::size_t>& order, std::size_t begin, std::size_t end,
                              const EffectivePrompts& eff, Tensor& ce, Tensor& cons) {
    std::vector<const Image*> imgs;
    std::vector<std::size_t> batch_labels;
    std::vector<Tensor> frozen_rows;
    for (std::size_t i = begin; i < end; ++i) {
      imgs.push_back(&task.dataset->images[train_set[order[i]]]);
      batch_labels.push_back(labels[order[i]]);
      frozen_rows.push_back(teacher.train_images[order[i]]);
    }
    const Tensor wp = backbone.text().encode(base_tokens, &eff.text);
    const Tensor vp = backbone.vision().encode(imgs, &eff.visual);
    ce = cross_entropy_logits(similarity_logits(vp, wp, hp.tau), batch_labels);
    cons = consistency_loss(normalize_rows(concat_rows(frozen_rows)), normalize_rows(vp), teacher.base_text,
                            normalize_rows(wp), hp.criterion);
  };

  TrainLog log;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  {
    const EffectivePrompts eff = learner.materialize();
    double acc = 0.0;
    for (std::size_t i = 0; i < order.size(); i += hp.batch_size) {
      const std::size_t end = std::min(order.size(), i + hp.batch_size);
      Tensor ce, cons;
      try {
        batch_loss(order, i, end, eff, ce, cons);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " before training");
      }
      acc += ce.item() * static_cast<double>(end - i);
    }
    log.initial_ce = acc / static_cast<double>(order.size());
  }

  Rng rng(hp.seed ^ 0xd1b54a32d192ed03ULL);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochLoss sum_loss;
    std::size_t batches = 0;
    for (std::size_t i = 0; i < order.size(); i += hp.batch_size, ++batches, ++step) {
      const std::size_t end = std::min(order.size(), i + hp.batch_size);
      const std::string where = "epoch " + std::to_string(epoch + 1) + ", step " + std::to_string(step + 1);
      Tensor ce, cons;
      try {
        batch_loss(order, i, end, learner.materialize(), ce, cons);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at " + where);
      }
      const Tensor total = hp.consistency ? total_loss(ce, cons, hp.lambda) : ce;
      if (!std::isfinite(total.item())) throw NumericError("loss is not finite at " + where);
      sum_loss.ce += ce.item();
      sum_loss.cons += cons.item();
      sum_loss.total += total.item();
      opt.zero_grad();
      backward(total);
      opt.step();
    }
    const double nb = static_cast<double>(batches);
    log.epochs.push_back({sum_loss.ce / nb, sum_loss.cons / nb, sum_loss.total / nb});
  }
  return log;
}

// Top-1 predictions for images against class rows [N x J].
inline std::vector<std::size_t> argmax_predictions(const Tensor& image_embeddings, const Tensor& class_embeddings) {
  const Tensor logits = similarity_logits(image_embeddings, class_embeddings, 1.0);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits.at(r, c) > logits.at(r, best)) best = c;
    out.push_back(best);
  }
  return out;
}

// Accuracy in percent of `samples` classified among `classes`. With a learner
// the prompted towers are used and classes are named by their bare class
// names; without one, the frozen teacher and its template ensemble.
inline double evaluate(const DualEncoder& backbone, const PromptLearner* learner, const Task& task,
                       const std::vector<std::size_t>& samples, const std::vector<std::size_t>& classes,
                       const std::vector<std::string>& templates, const Vocab& vocab) {
  if (samples.empty()) throw ProtocolError("evaluate: empty split");
  if (classes.empty()) throw ProtocolError("evaluate: no classes");
  std::vector<std::size_t> local(task.dataset->num_classes(), classes.size());
  for (std::size_t i = 0; i < classes.size(); ++i) local[classes[i]] = i;

  std::optional<EffectivePrompts> eff;
  if (learner) eff = learner->materialize();
  const auto names = task.names(classes);
  const Tensor class_rows =
      learner ? backbone.text().encode(tokenize_names(names, vocab, backbone.config().max_text_len), &eff->text).detach()
              : teacher_text_embeddings(names, templates, backbone.text(), vocab);

  std::size_t correct = 0;
  const std::size_t chunk = 64;
  for (std::size_t i = 0; i < samples.size(); i += chunk) {
    std::vector<const Image*> imgs;
    std::vector<std::size_t> truth;
    for (std::size_t j = i; j < std::min(samples.size(), i + chunk); ++j) {
      imgs.push_back(&task.dataset->images[samples[j]]);
      const std::size_t t = local[task.dataset->labels[samples[j]]];
      if (t == classes.size()) throw ProtocolError("evaluate: sample label outside the split's classes");
      truth.push_back(t);
    }
    const Tensor v = backbone.vision().encode(imgs, learner ? &eff->visual : nullptr);
    const auto pred = argmax_predictions(v, class_rows);
    for (std::size_t j = 0; j < pred.size(); ++j) correct += pred[j] == truth[j];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
}

inline double harmonic_mean(double base, double novel) {
  if (!(base > 0.0) || !(novel > 0.0)) throw DomainError("harmonic mean needs positive accuracies");
  return 2.0 * base * novel / (base + novel);
}

}  // namespace hicropl
