// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "hicropl/harness/experiment.hpp"

namespace hicropl::cli {

struct PathConfig {
  std::string vocab;      // empty: built-in vocabulary
  std::string templates;  // empty: built-in templates
  std::string dataset;    // empty: generate from data.*
  std::string teacher;    // pretrained backbone checkpoint
  std::string prompts;    // trained prompt checkpoint, for eval
};

struct PretrainConfig {
  PretrainOptions options;
  std::uint64_t data_seed = 1000;
  std::size_t samples_per_class = 100;
  double noise_std = 0.15;
  double background = 0.0;
};

struct AblateConfig {
  std::string grid = "flow";
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

// Every knob of every command, flat. Defaults are the desk-scale values.
struct RunConfig {
  EncoderConfig encoder;
  DatasetSpec data;
  SplitOptions split;
  PretrainConfig pretrain;
  RunSettings run;
  PathConfig paths;
  AblateConfig ablate;

  RunConfig() { data.seed = 1; }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  return out;
}

inline double to_double(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  double out = 0.0;
  in >> out;
  if (v.empty() || !in || !in.eof() || !std::isfinite(out))
    throw ConfigError(key + ": expected a finite number, got '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

inline std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(v);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field size_field(std::string key, T RunConfig::*group, std::size_t T::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*group).*member = to_u64(key, v); },
          [=](const RunConfig& c) { return std::to_string((c.*group).*member); }};
}

template <class T>
Field double_field(std::string key, T RunConfig::*group, double T::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*group).*member = to_double(key, v); },
          [=](const RunConfig& c) { return format_double((c.*group).*member); }};
}

template <class T>
Field string_field(std::string key, T RunConfig::*group, std::string T::*member) {
  return {key, [=](RunConfig& c, const std::string& v) { (c.*group).*member = v; },
          [=](const RunConfig& c) { return (c.*group).*member; }};
}

inline const std::vector<Field>& fields() {
  using RC = RunConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(size_field("encoder.L", &RC::encoder, &EncoderConfig::layers));
    f.push_back(size_field("encoder.heads", &RC::encoder, &EncoderConfig::heads));
    f.push_back(size_field("encoder.d_t", &RC::encoder, &EncoderConfig::text_width));
    f.push_back(size_field("encoder.d_v", &RC::encoder, &EncoderConfig::vision_width));
    f.push_back(size_field("encoder.joint", &RC::encoder, &EncoderConfig::joint_width));
    f.push_back(size_field("encoder.vocab_size", &RC::encoder, &EncoderConfig::vocab_size));
    f.push_back(size_field("encoder.max_text_len", &RC::encoder, &EncoderConfig::max_text_len));
    f.push_back(size_field("encoder.image_size", &RC::encoder, &EncoderConfig::image_size));
    f.push_back(size_field("encoder.patch_size", &RC::encoder, &EncoderConfig::patch_size));
    f.push_back(size_field("encoder.m", &RC::encoder, &EncoderConfig::prompt_len));

    f.push_back({"data.colors", [](RC& c, const std::string& v) { c.data.colors = to_list(v); },
                 [](const RC& c) { return join(c.data.colors); }});
    f.push_back({"data.shapes", [](RC& c, const std::string& v) { c.data.shapes = to_list(v); },
                 [](const RC& c) { return join(c.data.shapes); }});
    f.push_back(size_field("data.image_size", &RC::data, &DatasetSpec::image_size));
    f.push_back(double_field("data.noise_std", &RC::data, &DatasetSpec::noise_std));
    f.push_back(double_field("data.background", &RC::data, &DatasetSpec::background));
    f.push_back(size_field("data.samples_per_class", &RC::data, &DatasetSpec::samples_per_class));
    f.push_back({"data.seed", [](RC& c, const std::string& v) { c.data.seed = to_u64("data.seed", v); },
                 [](const RC& c) { return std::to_string(c.data.seed); }});
    f.push_back({"data.split",
                 [](RC& c, const std::string& v) {
                   if (v == "fraction") c.split.rule = SplitRule::kFraction;
                   else if (v == "compositional") c.split.rule = SplitRule::kCompositional;
                   else throw ConfigError("data.split: expected fraction or compositional, got '" + v + "'");
                 },
                 [](const RC& c) { return std::string(c.split.rule == SplitRule::kFraction ? "fraction" : "compositional"); }});
    f.push_back(double_field("data.novel_fraction", &RC::split, &SplitOptions::novel_fraction));
    f.push_back(double_field("data.train_share", &RC::split, &SplitOptions::train_share));

    f.push_back({"pretrain.epochs", [](RC& c, const std::string& v) { c.pretrain.options.epochs = to_u64("pretrain.epochs", v); },
                 [](const RC& c) { return std::to_string(c.pretrain.options.epochs); }});
    f.push_back({"pretrain.lr", [](RC& c, const std::string& v) { c.pretrain.options.lr = to_double("pretrain.lr", v); },
                 [](const RC& c) { return format_double(c.pretrain.options.lr); }});
    f.push_back({"pretrain.weight_decay",
                 [](RC& c, const std::string& v) { c.pretrain.options.weight_decay = to_double("pretrain.weight_decay", v); },
                 [](const RC& c) { return format_double(c.pretrain.options.weight_decay); }});
    f.push_back({"pretrain.tau", [](RC& c, const std::string& v) { c.pretrain.options.tau = to_double("pretrain.tau", v); },
                 [](const RC& c) { return format_double(c.pretrain.options.tau); }});
    f.push_back({"pretrain.seed", [](RC& c, const std::string& v) { c.pretrain.options.seed = to_u64("pretrain.seed", v); },
                 [](const RC& c) { return std::to_string(c.pretrain.options.seed); }});
    f.push_back({"pretrain.data_seed", [](RC& c, const std::string& v) { c.pretrain.data_seed = to_u64("pretrain.data_seed", v); },
                 [](const RC& c) { return std::to_string(c.pretrain.data_seed); }});
    f.push_back(size_field("pretrain.samples_per_class", &RC::pretrain, &PretrainConfig::samples_per_class));
    f.push_back(double_field("pretrain.noise_std", &RC::pretrain, &PretrainConfig::noise_std));
    f.push_back(double_field("pretrain.background", &RC::pretrain, &PretrainConfig::background));

    f.push_back({"flow.mechanism", [](RC& c, const std::string& v) { c.run.flow.mechanism = parse_mechanism(v); },
                 [](const RC& c) { return std::string(mechanism_name(c.run.flow.mechanism)); }});
    f.push_back({"flow.mapper_scale", [](RC& c, const std::string& v) { c.run.flow.mapper_scale = parse_scale(v); },
                 [](const RC& c) { return std::string(scale_name(c.run.flow.mapper_scale)); }});
    f.push_back({"flow.compression", [](RC& c, const std::string& v) { c.run.flow.compression = parse_compression(v); },
                 [](const RC& c) { return std::string(compression_name(c.run.flow.compression)); }});
    f.push_back({"flow.knowledge_flow",
                 [](RC& c, const std::string& v) { c.run.flow.knowledge_flow = to_bool("flow.knowledge_flow", v); },
                 [](const RC& c) { return std::string(c.run.flow.knowledge_flow ? "true" : "false"); }});
    f.push_back({"flow.mapper_heads", [](RC& c, const std::string& v) { c.run.flow.mapper_heads = to_u64("flow.mapper_heads", v); },
                 [](const RC& c) { return std::to_string(c.run.flow.mapper_heads); }});
    f.push_back({"flow.boundary_k", [](RC& c, const std::string& v) { c.run.hp.boundary_k = to_u64("flow.boundary_k", v); },
                 [](const RC& c) { return std::to_string(c.run.hp.boundary_k); }});

    const auto hp_double = [&f](const std::string& key, double Hyperparams::*m) {
      f.push_back({key, [=](RC& c, const std::string& v) { c.run.hp.*m = to_double(key, v); },
                   [=](const RC& c) { return format_double(c.run.hp.*m); }});
    };
    const auto hp_size = [&f](const std::string& key, std::size_t Hyperparams::*m) {
      f.push_back({key, [=](RC& c, const std::string& v) { c.run.hp.*m = to_u64(key, v); },
                   [=](const RC& c) { return std::to_string(c.run.hp.*m); }});
    };
    hp_double("train.lr", &Hyperparams::lr);
    hp_double("train.beta1", &Hyperparams::beta1);
    hp_double("train.beta2", &Hyperparams::beta2);
    hp_double("train.weight_decay", &Hyperparams::weight_decay);
    hp_size("train.epochs", &Hyperparams::epochs);
    hp_size("train.batch_size", &Hyperparams::batch_size);
    hp_size("train.k_shots", &Hyperparams::k_shots);
    hp_double("train.lambda", &Hyperparams::lambda);
    hp_size("train.prompt_depth", &Hyperparams::prompt_depth);
    hp_double("train.tau", &Hyperparams::tau);
    f.push_back({"train.consistency", [](RC& c, const std::string& v) { c.run.hp.consistency = to_bool("train.consistency", v); },
                 [](const RC& c) { return std::string(c.run.hp.consistency ? "true" : "false"); }});
    f.push_back({"train.criterion", [](RC& c, const std::string& v) { c.run.hp.criterion = parse_criterion(v); },
                 [](const RC& c) { return std::string(criterion_name(c.run.hp.criterion)); }});
    f.push_back({"train.seed", [](RC& c, const std::string& v) { c.run.hp.seed = to_u64("train.seed", v); },
                 [](const RC& c) { return std::to_string(c.run.hp.seed); }});
    f.push_back({"train.teacher",
                 [](RC& c, const std::string& v) {
                   if (v == "ensemble") c.run.ensemble_teacher = true;
                   else if (v == "single") c.run.ensemble_teacher = false;
                   else throw ConfigError("train.teacher: expected ensemble or single, got '" + v + "'");
                 },
                 [](const RC& c) { return std::string(c.run.ensemble_teacher ? "ensemble" : "single"); }});

    f.push_back(string_field("paths.vocab", &RC::paths, &PathConfig::vocab));
    f.push_back(string_field("paths.templates", &RC::paths, &PathConfig::templates));
    f.push_back(string_field("paths.dataset", &RC::paths, &PathConfig::dataset));
    f.push_back(string_field("paths.teacher", &RC::paths, &PathConfig::teacher));
    f.push_back(string_field("paths.prompts", &RC::paths, &PathConfig::prompts));

    f.push_back(string_field("ablate.grid", &RC::ablate, &AblateConfig::grid));
    f.push_back({"ablate.seeds",
                 [](RC& c, const std::string& v) {
                   c.ablate.seeds.clear();
                   for (const auto& s : to_list(v)) c.ablate.seeds.push_back(to_u64("ablate.seeds", s));
                   if (c.ablate.seeds.empty()) throw ConfigError("ablate.seeds: at least one seed is required");
                 },
                 [](const RC& c) {
                   std::vector<std::string> s;
                   for (auto x : c.ablate.seeds) s.push_back(std::to_string(x));
                   return join(s);
                 }});
    return f;
  }();
  return table;
}

}  // namespace detail

inline void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields())
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

// "key=value" as given to --set.
inline void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set_value(config, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

// Flat "key = value" lines; '#' starts a comment line.
inline void parse_config(std::istream& in, RunConfig& config) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + " is not key = value");
    set_value(config, detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  RunConfig config;
  parse_config(in, config);
  return config;
}

inline KeyValues snapshot(const RunConfig& config) {
  KeyValues out;
  for (const auto& f : detail::fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

// Re-readable by parse_config.
inline void write_config(std::ostream& out, const RunConfig& config) {
  for (const auto& [k, v] : snapshot(config)) out << k << " = " << v << '\n';
}

// Cross-field checks beyond what each parser enforces.
inline void validate(const RunConfig& c) {
  c.encoder.validate();
  if (c.data.image_size != c.encoder.image_size)
    throw ConfigError("data.image_size must equal encoder.image_size");
  const auto& hp = c.run.hp;
  if (hp.prompt_depth == 0 || hp.prompt_depth > c.encoder.layers)
    throw ConfigError("train.prompt_depth must lie in [1, encoder.L]");
  if (!(hp.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(hp.beta1 >= 0.0 && hp.beta1 < 1.0) || !(hp.beta2 >= 0.0 && hp.beta2 < 1.0))
    throw ConfigError("train.beta1 and train.beta2 must lie in [0, 1)");
  if (hp.weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (hp.epochs == 0 || hp.batch_size == 0 || hp.k_shots == 0)
    throw ConfigError("train.epochs, train.batch_size and train.k_shots must be positive");
  if (hp.lambda < 0.0) throw ConfigError("train.lambda must be non-negative");
  if (!(hp.tau > 0.0)) throw ConfigError("train.tau must be positive");
  if (c.run.flow.mapper_heads == 0) throw ConfigError("flow.mapper_heads must be positive");
  validate_boundary(c.run.flow.mechanism, hp.prompt_depth,
                    effective_boundary(c.run.flow.mechanism, hp.prompt_depth, hp.boundary_k));
  if (!(c.pretrain.options.lr > 0.0) || !(c.pretrain.options.tau > 0.0))
    throw ConfigError("pretrain.lr and pretrain.tau must be positive");
  if (c.pretrain.samples_per_class == 0) throw ConfigError("pretrain.samples_per_class must be positive");
}

}  // namespace hicropl::cli
