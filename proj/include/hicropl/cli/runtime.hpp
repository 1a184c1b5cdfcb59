// SPDX-License-Identifier: Apache-2.0
// Turns a resolved configuration into the objects the commands operate on.
#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hicropl/cli/config.hpp"
#include "hicropl/numcore/grad_check.hpp"

namespace hicropl::cli {

inline Vocab resolve_vocab(const RunConfig& c) {
  Vocab v = c.paths.vocab.empty() ? default_vocab() : load_vocab(c.paths.vocab);
  if (v.size() > c.encoder.vocab_size)
    throw ConfigError("vocabulary has " + std::to_string(v.size()) + " entries, encoder.vocab_size is " +
                      std::to_string(c.encoder.vocab_size));
  return v;
}

inline std::vector<std::string> resolve_templates(const RunConfig& c) {
  return c.paths.templates.empty() ? default_templates() : load_templates(c.paths.templates);
}

inline std::vector<std::string> class_names(const DatasetSpec& spec) {
  std::vector<std::string> out;
  for (const auto& color : spec.colors)
    for (const auto& shape : spec.shapes) out.push_back(color + " " + shape);
  return out;
}

inline std::shared_ptr<const Dataset> resolve_dataset(const RunConfig& c) {
  if (c.paths.dataset.empty()) return std::make_shared<const Dataset>(generate_dataset(c.data));
  if (!std::filesystem::exists(c.paths.dataset)) throw IoError("dataset file " + c.paths.dataset + " does not exist");
  auto ds = load_dataset(c.paths.dataset, class_names(c.data), c.data.colors.size(), c.data.shapes.size());
  for (auto label : ds.labels)
    if (label >= ds.num_classes()) throw SpecError("dataset label outside the configured color x shape classes");
  return std::make_shared<const Dataset>(std::move(ds));
}

// The teacher backbone, contrastively pretrained on its own dataset draw.
inline DualEncoder pretrain_teacher(const RunConfig& c) {
  DatasetSpec spec = c.data;
  spec.seed = c.pretrain.data_seed;
  spec.samples_per_class = c.pretrain.samples_per_class;
  spec.noise_std = c.pretrain.noise_std;
  spec.background = c.pretrain.background;
  return pretrain_backbone(generate_dataset(spec), resolve_templates(c), resolve_vocab(c), c.encoder, c.pretrain.options);
}

// Finite-difference check of the full objective, through both prompted towers,
// with respect to every learnable prompt-side parameter. Returns the result
// and the parameter names, indexed like the result's inputs.
inline std::pair<GradCheckResult, std::vector<std::string>> objective_grad_check(const RunConfig& c) {
  const DualEncoder backbone = [&] {
    DualEncoder m(c.encoder, c.run.hp.seed);
    m.freeze();
    return m;
  }();
  DatasetSpec spec = c.data;
  spec.samples_per_class = 2;
  const auto ds = std::make_shared<const Dataset>(generate_dataset(spec));
  SplitOptions split = c.split;
  split.train_share = 0.5;
  const Task task = split_base_novel(ds, split, c.run.hp.seed);
  const auto train_set = sample_few_shot(task, 1, c.run.hp.seed);
  const auto vocab = resolve_vocab(c);
  const auto cache = build_teacher_cache(backbone, task, train_set, resolve_templates(c), vocab);
  PromptLearner learner(backbone.config(), c.run.flow, c.run.hp.boundary_k, c.run.hp.seed, c.run.hp.prompt_depth);
  const auto tokens = tokenize_names(task.names(task.base_classes), vocab, c.encoder.max_text_len);
  std::vector<const Image*> images;
  std::vector<std::size_t> labels;
  std::vector<Tensor> frozen;
  for (std::size_t i = 0; i < train_set.size(); ++i) {
    images.push_back(&ds->images[train_set[i]]);
    labels.push_back(i);
    frozen.push_back(cache.train_images[i]);
  }
  const ParamList params = learner.params();
  std::vector<Tensor> inputs;
  for (const auto& [name, t] : params) inputs.push_back(t);
  const double tau = 0.5;
  const auto loss = [&] {
    const auto eff = learner.materialize();
    const Tensor wp = backbone.text().encode(tokens, &eff.text);
    const Tensor vp = backbone.vision().encode(images, &eff.visual);
    const Tensor ce = cross_entropy_logits(similarity_logits(vp, wp, tau), labels);
    const Tensor cons = consistency_loss(normalize_rows(concat_rows(frozen)), normalize_rows(vp), cache.base_text,
                                         normalize_rows(wp), c.run.hp.criterion);
    return total_loss(ce, cons, c.run.hp.lambda);
  };
  GradCheckOptions opts;
  opts.max_probes_per_input = 4;
  // Mapper query/key gradients are ~1e-8 at init (near-uniform attention over
  // small prompts), where finite differences are dominated by round-off.
  opts.floor = 1e-5;
  opts.seed = c.run.hp.seed;
  std::vector<std::string> names;
  for (const auto& [name, t] : params) names.push_back(name);
  return {grad_check_detailed(loss, inputs, opts), names};
}

}  // namespace hicropl::cli
