// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "hicropl/harness/dataset.hpp"

namespace hicropl {

enum class SplitRule {
  // Seeded class-level shuffle; the first round(fraction * N) classes are novel.
  kFraction,
  // Holds out color x shape pairs on a diagonal: class (i, j) is novel when
  // (i + j) mod |shapes| == seed mod |shapes|, so every color and every shape
  // still occurs among the base classes.
  kCompositional,
};

struct SplitOptions {
  SplitRule rule = SplitRule::kFraction;
  double novel_fraction = 0.5;
  // Leading share of each class's samples that may be drawn for training;
  // the rest is the test set.
  double train_share = 0.5;
};

// Base-to-novel task over a dataset. Class indices are global dataset labels.
struct Task {
  std::shared_ptr<const Dataset> dataset;
  std::vector<std::size_t> base_classes;
  std::vector<std::size_t> novel_classes;
  std::vector<std::vector<std::size_t>> train_pool;  // per base class, sample indices
  std::vector<std::size_t> base_test;                // sample indices
  std::vector<std::size_t> novel_test;

  std::vector<std::string> names(const std::vector<std::size_t>& classes) const {
    std::vector<std::string> out;
    for (auto c : classes) out.push_back(dataset->class_names[c]);
    return out;
  }
};

inline Task split_base_novel(std::shared_ptr<const Dataset> dataset, const SplitOptions& options, std::uint64_t seed) {
  const std::size_t n = dataset->num_classes();
  std::vector<bool> novel(n, false);
  if (options.rule == SplitRule::kFraction) {
    if (!(options.novel_fraction > 0.0 && options.novel_fraction < 1.0))
      throw ProtocolError("novel fraction must lie in (0, 1)");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng.engine());
    const auto count = static_cast<std::size_t>(std::llround(options.novel_fraction * static_cast<double>(n)));
    for (std::size_t i = 0; i < count; ++i) novel[order[i]] = true;
  } else {
    if (dataset->num_shapes == 0) throw ProtocolError("compositional split needs color x shape structure");
    const std::size_t r = seed % dataset->num_shapes;
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t ci = c / dataset->num_shapes, si = c % dataset->num_shapes;
      novel[c] = (ci + si) % dataset->num_shapes == r;
    }
  }

  Task task;
  task.dataset = dataset;
  for (std::size_t c = 0; c < n; ++c) (novel[c] ? task.novel_classes : task.base_classes).push_back(c);
  if (task.base_classes.size() < 2 || task.novel_classes.size() < 2)
    throw ProtocolError("split leaves " + std::to_string(task.base_classes.size()) + " base and " +
                        std::to_string(task.novel_classes.size()) + " novel classes; need at least 2 each");

  std::vector<std::vector<std::size_t>> by_class(n);
  for (std::size_t i = 0; i < dataset->size(); ++i) by_class[dataset->labels[i]].push_back(i);
  for (std::size_t c = 0; c < n; ++c) {
    const auto& all = by_class[c];
    const auto cut = static_cast<std::size_t>(std::floor(options.train_share * static_cast<double>(all.size())));
    if (novel[c]) {
      task.novel_test.insert(task.novel_test.end(), all.begin() + static_cast<long>(cut), all.end());
    } else {
      task.train_pool.emplace_back(all.begin(), all.begin() + static_cast<long>(cut));
      task.base_test.insert(task.base_test.end(), all.begin() + static_cast<long>(cut), all.end());
    }
  }
  return task;
}

// Exactly K samples per base class, drawn without replacement. Returned in
// base-class order.
inline std::vector<std::size_t> sample_few_shot(const Task& task, std::size_t k, std::uint64_t seed) {
  if (k == 0) throw ProtocolError("K must be positive");
  Rng rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < task.base_classes.size(); ++b) {
    auto pool = task.train_pool[b];
    if (pool.size() < k)
      throw ProtocolError("base class '" + task.dataset->class_names[task.base_classes[b]] + "' has " +
                          std::to_string(pool.size()) + " training samples, K = " + std::to_string(k));
    std::shuffle(pool.begin(), pool.end(), rng.engine());
    out.insert(out.end(), pool.begin(), pool.begin() + static_cast<long>(k));
  }
  return out;
}

}  // namespace hicropl
