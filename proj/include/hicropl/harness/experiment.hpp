// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hicropl/harness/training.hpp"

namespace hicropl {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// Everything that varies between grid cells.
struct RunSettings {
  FlowConfig flow;
  Hyperparams hp;
  std::size_t prompt_len = 0;  // 0 keeps the backbone's
  // Teacher text from the template ensemble, or from the first template only.
  bool ensemble_teacher = true;
};

// Shared, read-only inputs of a family of runs.
struct ExperimentContext {
  std::shared_ptr<const Dataset> dataset;
  SplitOptions split;
  DualEncoder backbone;  // frozen
  Vocab vocab;
  std::vector<std::string> templates;
};

struct RunReport {
  std::string variant;
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double hm = 0.0;
  double initial_ce = 0.0;
  std::vector<EpochLoss> epochs;
  KeyValues config;
  std::string error;  // non-empty when the cell failed

  bool ok() const { return error.empty(); }
};

// HM of a report. A run with a zero accuracy has HM 0 rather than an error.
inline double report_hm(double base, double novel) {
  return base > 0.0 && novel > 0.0 ? harmonic_mean(base, novel) : 0.0;
}

inline std::string format_double(double x, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, x);
  return buf;
}

inline std::string format_percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", x);
  return buf;
}

// Percent-escapes the characters that would break a key=value record.
inline std::string escape_value(const std::string& s) {
  std::string out;
  for (unsigned char c : s) {
    if (c == '%' || c == '=' || c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ',') {
      char buf[4];
      std::snprintf(buf, sizeof buf, "%%%02X", c);
      out += buf;
    } else {
      out += static_cast<char>(c);
    }
  }
  return out;
}

inline KeyValues describe(const RunSettings& s, const EncoderConfig& encoder) {
  const auto& hp = s.hp;
  return {
      {"encoder.m", std::to_string(s.prompt_len ? s.prompt_len : encoder.prompt_len)},
      {"flow.mechanism", std::string(mechanism_name(s.flow.mechanism))},
      {"flow.mapper_scale", std::string(scale_name(s.flow.mapper_scale))},
      {"flow.compression", std::string(compression_name(s.flow.compression))},
      {"flow.knowledge_flow", s.flow.knowledge_flow ? "true" : "false"},
      {"flow.mapper_heads", std::to_string(s.flow.mapper_heads)},
      {"flow.boundary_k", std::to_string(hp.boundary_k)},
      {"train.lr", format_double(hp.lr)},
      {"train.beta1", format_double(hp.beta1)},
      {"train.beta2", format_double(hp.beta2)},
      {"train.weight_decay", format_double(hp.weight_decay)},
      {"train.epochs", std::to_string(hp.epochs)},
      {"train.batch_size", std::to_string(hp.batch_size)},
      {"train.k_shots", std::to_string(hp.k_shots)},
      {"train.lambda", format_double(hp.lambda)},
      {"train.prompt_depth", std::to_string(hp.prompt_depth)},
      {"train.tau", format_double(hp.tau)},
      {"train.consistency", hp.consistency ? "true" : "false"},
      {"train.criterion", std::string(criterion_name(hp.criterion))},
      {"train.seed", std::to_string(hp.seed)},
      {"train.teacher", s.ensemble_teacher ? "ensemble" : "single"},
  };
}

// One self-describing line: status, metrics, per-epoch losses, then the
// config snapshot.
inline std::string to_record(const RunReport& r) {
  std::ostringstream out;
  out << "variant=" << escape_value(r.variant) << " seed=" << r.seed << " status=" << (r.ok() ? "ok" : "failed");
  if (!r.ok()) {
    out << " error=" << escape_value(r.error);
  } else {
    out << " base=" << format_double(r.base_acc) << " novel=" << format_double(r.novel_acc)
        << " hm=" << format_double(r.hm) << " initial_ce=" << format_double(r.initial_ce)
        << " epochs=" << r.epochs.size();
    const auto series = [&](const char* key, double EpochLoss::*field) {
      out << ' ' << key << '=';
      for (std::size_t i = 0; i < r.epochs.size(); ++i) out << (i ? "," : "") << format_double(r.epochs[i].*field);
    };
    series("ce", &EpochLoss::ce);
    series("cons", &EpochLoss::cons);
    series("total", &EpochLoss::total);
  }
  for (const auto& [k, v] : r.config) out << ' ' << k << '=' << escape_value(v);
  return out.str();
}

// RFC 4180 quoting for fields holding a comma, quote or line break.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + '"';
}

inline void write_csv(std::ostream& out, const std::vector<RunReport>& reports) {
  out << "variant,seed,base,novel,hm\n";
  for (const auto& r : reports) {
    out << csv_field(r.variant) << ',' << r.seed << ',';
    if (r.ok())
      out << format_percent(r.base_acc) << ',' << format_percent(r.novel_acc) << ',' << format_percent(r.hm) << '\n';
    else
      out << "failed,failed,failed\n";
  }
}

struct VariantSummary {
  std::string variant;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double base = 0.0;
  double novel = 0.0;
  double hm = 0.0;  // mean of per-seed HM
};

// Means over seeds per variant, in first-appearance order.
inline std::vector<VariantSummary> summarize(const std::vector<RunReport>& reports) {
  std::vector<VariantSummary> out;
  for (const auto& r : reports) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& s) { return s.variant == r.variant; });
    if (it == out.end()) it = out.insert(out.end(), VariantSummary{r.variant});
    if (!r.ok()) {
      ++it->failures;
      continue;
    }
    ++it->runs;
    it->base += r.base_acc;
    it->novel += r.novel_acc;
    it->hm += r.hm;
  }
  for (auto& s : out)
    if (s.runs) {
      const double n = static_cast<double>(s.runs);
      s.base /= n;
      s.novel /= n;
      s.hm /= n;
    }
  return out;
}

inline void write_summary_csv(std::ostream& out, const std::vector<VariantSummary>& rows) {
  out << "variant,runs,failures,base,novel,hm\n";
  for (const auto& s : rows)
    out << csv_field(s.variant) << ',' << s.runs << ',' << s.failures << ',' << format_percent(s.base) << ','
        << format_percent(s.novel) << ',' << format_percent(s.hm) << '\n';
}

struct ExperimentResult {
  RunReport report;
  PromptLearner learner;
};

// Split, sample, train and evaluate one (settings, seed) cell. The seed drives
// the class split, the few-shot draw, prompt initialization and batching.
inline ExperimentResult run_experiment(const ExperimentContext& ctx, const RunSettings& settings,
                                       const std::string& variant) {
  const Hyperparams& hp = settings.hp;
  const DualEncoder backbone =
      settings.prompt_len && settings.prompt_len != ctx.backbone.config().prompt_len
          ? ctx.backbone.with_prompt_len(settings.prompt_len)
          : ctx.backbone;
  if (hp.prompt_depth == 0 || hp.prompt_depth > backbone.config().layers)
    throw ConfigError("prompt_depth must lie in [1, " + std::to_string(backbone.config().layers) + "]");

  const Task task = split_base_novel(ctx.dataset, ctx.split, hp.seed);
  const auto train_set = sample_few_shot(task, hp.k_shots, hp.seed);
  const std::vector<std::string> teacher_templates =
      settings.ensemble_teacher ? ctx.templates : std::vector<std::string>{ctx.templates.at(0)};
  const TeacherCache cache = build_teacher_cache(backbone, task, train_set, teacher_templates, ctx.vocab);

  ExperimentResult out{{}, PromptLearner(backbone.config(), settings.flow, hp.boundary_k, hp.seed, hp.prompt_depth)};
  const TrainLog log = train(backbone, out.learner, task, train_set, cache, hp, ctx.vocab);

  RunReport& r = out.report;
  r.variant = variant;
  r.seed = hp.seed;
  r.initial_ce = log.initial_ce;
  r.epochs = log.epochs;
  r.base_acc = evaluate(backbone, &out.learner, task, task.base_test, task.base_classes, {}, ctx.vocab);
  r.novel_acc = evaluate(backbone, &out.learner, task, task.novel_test, task.novel_classes, {}, ctx.vocab);
  r.hm = report_hm(r.base_acc, r.novel_acc);
  r.config = describe(settings, backbone.config());
  return out;
}

// The frozen teacher with its template ensemble on the same split.
inline RunReport run_zero_shot(const ExperimentContext& ctx, std::uint64_t seed) {
  const Task task = split_base_novel(ctx.dataset, ctx.split, seed);
  RunReport r;
  r.variant = "zero_shot";
  r.seed = seed;
  r.base_acc = evaluate(ctx.backbone, nullptr, task, task.base_test, task.base_classes, ctx.templates, ctx.vocab);
  r.novel_acc = evaluate(ctx.backbone, nullptr, task, task.novel_test, task.novel_classes, ctx.templates, ctx.vocab);
  r.hm = report_hm(r.base_acc, r.novel_acc);
  r.config = {{"train.seed", std::to_string(seed)}, {"train.teacher", "ensemble"}};
  return r;
}

struct Variant {
  std::string name;
  RunSettings settings;
};

// HICROPL_THREADS caps the worker count; unset means one per hardware thread.
inline std::size_t worker_count(std::size_t cells) {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HICROPL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw ConfigError("HICROPL_THREADS must be a positive integer");
    n = std::min(n, static_cast<std::size_t>(v));
  }
  return std::max<std::size_t>(1, std::min(n, cells));
}

// Every variant under every seed, variant-major. Cells run in parallel, each
// with its own learner; a failing cell is recorded and the grid continues.
inline std::vector<RunReport> run_ablation(const ExperimentContext& ctx, const std::vector<Variant>& variants,
                                           const std::vector<std::uint64_t>& seeds) {
  const std::size_t cells = variants.size() * seeds.size();
  std::vector<RunReport> reports(cells);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < cells; i = next++) {
      const Variant& v = variants[i / seeds.size()];
      RunSettings s = v.settings;
      s.hp.seed = seeds[i % seeds.size()];
      try {
        reports[i] = run_experiment(ctx, s, v.name).report;
      } catch (const std::exception& e) {
        reports[i].variant = v.name;
        reports[i].seed = s.hp.seed;
        reports[i].error = e.what();
        reports[i].config = describe(s, ctx.backbone.config());
      }
    }
  };
  const std::size_t threads = worker_count(cells);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return reports;
}

// Named grids mirroring the ablation studies. Each starts from `base`.
inline std::vector<std::string> builtin_grid_names() {
  return {"flow", "boundary", "scale", "compression", "criterion", "components", "depth", "length", "teacher"};
}

inline std::vector<Variant> builtin_grid(const std::string& name, const RunSettings& base, std::size_t layers) {
  std::vector<Variant> out;
  const auto add = [&](std::string label, auto&& edit) {
    RunSettings s = base;
    edit(s);
    out.push_back({std::move(label), s});
  };
  if (name == "flow") {
    for (auto m : {FlowMechanism::kUnidirTI, FlowMechanism::kUnidirIT, FlowMechanism::kBidirITThenTI,
                   FlowMechanism::kBidirTIThenIT})
      add(std::string(mechanism_name(m)), [&](RunSettings& s) { s.flow.mechanism = m; });
  } else if (name == "boundary") {
    // Interior boundaries, leaving at least two layers on each side.
    const std::size_t lo = layers >= 4 ? 2 : 1, hi = layers >= 4 ? layers - 2 : layers - 1;
    for (std::size_t k = lo; k <= hi; ++k)
      add("k=" + std::to_string(k), [&](RunSettings& s) { s.hp.boundary_k = k; });
  } else if (name == "scale") {
    for (auto m : {MapperScale::kSingle, MapperScale::kMulti})
      add(std::string(scale_name(m)), [&](RunSettings& s) { s.flow.mapper_scale = m; });
  } else if (name == "compression") {
    for (auto c : {Compression::kAverage, Compression::kMlp, Compression::kLkp})
      add(std::string(compression_name(c)), [&](RunSettings& s) { s.flow.compression = c; });
  } else if (name == "criterion") {
    for (auto c : {ConsistencyCriterion::kMse, ConsistencyCriterion::kL1, ConsistencyCriterion::kCosine})
      add(std::string(criterion_name(c)), [&](RunSettings& s) { s.hp.criterion = c; });
  } else if (name == "components") {
    for (bool flow : {false, true})
      for (bool cons : {false, true})
        add(std::string(flow ? "bkf" : "no_bkf") + (cons ? "+cons" : "-cons"), [&](RunSettings& s) {
          s.flow.knowledge_flow = flow;
          s.hp.consistency = cons;
        });
  } else if (name == "depth") {
    for (std::size_t d = 2; d <= layers; d += 2)
      add("depth=" + std::to_string(d), [&](RunSettings& s) {
        s.hp.prompt_depth = d;
        s.hp.boundary_k = std::max<std::size_t>(1, d / 2);
      });
  } else if (name == "length") {
    for (std::size_t m : {1, 2, 4, 8})
      add("m=" + std::to_string(m), [&](RunSettings& s) { s.prompt_len = m; });
  } else if (name == "teacher") {
    add("single", [](RunSettings& s) { s.ensemble_teacher = false; });
    add("ensemble", [](RunSettings& s) { s.ensemble_teacher = true; });
  } else {
    throw ConfigError("unknown ablation grid '" + name + "'");
  }
  return out;
}

}  // namespace hicropl
