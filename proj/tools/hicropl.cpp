// SPDX-License-Identifier: Apache-2.0
// Command-line driver: dataset generation, teacher pretraining, prompt
// training, evaluation, ablation grids and gradient checks.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hicropl/cli/runtime.hpp"

namespace fs = std::filesystem;
using namespace hicropl;

namespace {

enum ExitCode {
  kExitOk = 0,
  kExitGeneric = 1,
  kExitConfig = 2,
  kExitMissingCheckpoint = 3,
  kExitNumeric = 4,
  kExitIo = 5,
  kExitProtocol = 6,
};

struct MissingCheckpoint : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "hicropl-out";
  std::optional<std::uint64_t> seed;
  bool overwrite = false;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "flat key = value config file");
  cmd->add_option("--set", o.sets, "override, key=value (repeatable)");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "seed for this command");
  cmd->add_flag("--overwrite", o.overwrite, "replace existing outputs");
}

cli::RunConfig resolve(const CommonOptions& o, const char* seed_key) {
  cli::RunConfig c = o.config_path.empty() ? cli::RunConfig{} : cli::load_config(o.config_path);
  for (const auto& s : o.sets) cli::apply_override(c, s);
  if (o.seed) cli::set_value(c, seed_key, std::to_string(*o.seed));
  cli::validate(c);
  return c;
}

// Creates the output directory and refuses to clobber outputs unless asked.
fs::path prepare_out(const CommonOptions& o, const std::vector<std::string>& files) {
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  for (const auto& f : files)
    if (fs::exists(dir / f) && !o.overwrite)
      throw IoError((dir / f).string() + " already exists; pass --overwrite to replace it");
  return dir;
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string config_text(const cli::RunConfig& c) {
  std::ostringstream out;
  cli::write_config(out, c);
  return out.str();
}

DualEncoder load_teacher(const cli::RunConfig& c) {
  if (c.paths.teacher.empty()) throw MissingCheckpoint("paths.teacher is not set; run pretrain first");
  if (!fs::exists(c.paths.teacher)) throw MissingCheckpoint("teacher checkpoint " + c.paths.teacher + " not found");
  DualEncoder model(c.encoder, 0);
  io::load_params(c.paths.teacher, model.params());
  model.freeze();
  return model;
}

ExperimentContext make_context(const cli::RunConfig& c) {
  return {resolve_dataset(c), c.split, load_teacher(c), cli::resolve_vocab(c), cli::resolve_templates(c)};
}

// The full snapshot with the cell's own settings written over it.
KeyValues merged_snapshot(const cli::RunConfig& c, const KeyValues& cell) {
  KeyValues out = cli::snapshot(c);
  for (const auto& [k, v] : cell)
    for (auto& [key, value] : out)
      if (key == k) value = v;
  return out;
}

std::string losses_csv(const RunReport& r) {
  std::ostringstream out;
  out << "epoch,ce,cons,total\n0," << format_double(r.initial_ce) << ",,\n";
  for (std::size_t e = 0; e < r.epochs.size(); ++e)
    out << e + 1 << ',' << format_double(r.epochs[e].ce) << ',' << format_double(r.epochs[e].cons) << ','
        << format_double(r.epochs[e].total) << '\n';
  return out.str();
}

int cmd_gen_data(const CommonOptions& o) {
  const auto c = resolve(o, "data.seed");
  const auto dir = prepare_out(o, {"dataset.bin", "manifest.txt"});
  const Dataset ds = generate_dataset(c.data);
  save_dataset((dir / "dataset.bin").string(), ds);
  std::ostringstream m;
  m << "classes=" << ds.num_classes() << "\nsamples=" << ds.size() << "\nhash=" << io::hex64(dataset_hash(ds)) << '\n';
  for (std::size_t i = 0; i < ds.num_classes(); ++i) m << "class." << i << '=' << escape_value(ds.class_names[i]) << '\n';
  for (const auto& [k, v] : cli::snapshot(c)) m << "config." << k << '=' << escape_value(v) << '\n';
  write_file(dir / "manifest.txt", m.str());
  std::cout << "dataset classes=" << ds.num_classes() << " samples=" << ds.size()
            << " hash=" << io::hex64(dataset_hash(ds)) << '\n';
  return kExitOk;
}

int cmd_pretrain(const CommonOptions& o) {
  const auto c = resolve(o, "pretrain.seed");
  const auto dir = prepare_out(o, {"teacher.ckpt", "pretrain.txt", "config.txt"});
  const auto vocab = cli::resolve_vocab(c);
  const auto templates = cli::resolve_templates(c);
  const DualEncoder model = cli::pretrain_teacher(c);
  io::save_params((dir / "teacher.ckpt").string(), model.params());

  // Zero-shot accuracy of the fresh teacher over every class of the task data.
  const auto ds = cli::resolve_dataset(c);
  Task all;
  all.dataset = ds;
  for (std::size_t k = 0; k < ds->num_classes(); ++k) all.base_classes.push_back(k);
  for (std::size_t i = 0; i < ds->size(); ++i) all.base_test.push_back(i);
  const double acc = evaluate(model, nullptr, all, all.base_test, all.base_classes, templates, vocab);

  std::ostringstream r;
  r << "hash=" << io::hex64(io::hash_params(model.params())) << " zero_shot_all=" << format_double(acc);
  for (const auto& [k, v] : cli::snapshot(c)) r << ' ' << k << '=' << escape_value(v);
  write_file(dir / "pretrain.txt", r.str() + '\n');
  write_file(dir / "config.txt", config_text(c));
  std::cout << "teacher hash=" << io::hex64(io::hash_params(model.params())) << " zero_shot_all=" << format_percent(acc)
            << '\n';
  return kExitOk;
}

int cmd_train(const CommonOptions& o) {
  const auto c = resolve(o, "train.seed");
  const auto dir = prepare_out(o, {"report.txt", "metrics.csv", "losses.csv", "prompts.ckpt", "config.txt"});
  const auto ctx = make_context(c);
  const std::uint64_t before = io::hash_params(ctx.backbone.params());
  auto result = run_experiment(ctx, c.run, "train");
  if (io::hash_params(ctx.backbone.params()) != before) throw ContractError("training modified the frozen teacher");
  result.report.config = merged_snapshot(c, result.report.config);

  io::save_params((dir / "prompts.ckpt").string(), result.learner.params());
  write_file(dir / "report.txt", to_record(result.report) + '\n');
  std::ostringstream metrics;
  write_csv(metrics, {result.report});
  write_file(dir / "metrics.csv", metrics.str());
  write_file(dir / "losses.csv", losses_csv(result.report));
  write_file(dir / "config.txt", config_text(c));
  std::cout << "base=" << format_percent(result.report.base_acc) << " novel=" << format_percent(result.report.novel_acc)
            << " hm=" << format_percent(result.report.hm) << '\n';
  return kExitOk;
}

int cmd_eval(const CommonOptions& o) {
  const auto c = resolve(o, "train.seed");
  const auto dir = prepare_out(o, {"eval.txt", "metrics.csv", "config.txt"});
  const auto ctx = make_context(c);
  RunReport report;
  if (c.paths.prompts.empty()) {
    report = run_zero_shot(ctx, c.run.hp.seed);
  } else {
    if (!fs::exists(c.paths.prompts)) throw MissingCheckpoint("prompt checkpoint " + c.paths.prompts + " not found");
    const DualEncoder backbone = ctx.backbone.with_prompt_len(c.encoder.prompt_len);
    PromptLearner learner(backbone.config(), c.run.flow, c.run.hp.boundary_k, c.run.hp.seed, c.run.hp.prompt_depth);
    io::load_params(c.paths.prompts, learner.params());
    const Task task = split_base_novel(ctx.dataset, ctx.split, c.run.hp.seed);
    report.variant = "eval";
    report.seed = c.run.hp.seed;
    report.base_acc = evaluate(backbone, &learner, task, task.base_test, task.base_classes, {}, ctx.vocab);
    report.novel_acc = evaluate(backbone, &learner, task, task.novel_test, task.novel_classes, {}, ctx.vocab);
    report.hm = report_hm(report.base_acc, report.novel_acc);
  }
  report.config = merged_snapshot(c, report.config);
  write_file(dir / "eval.txt", to_record(report) + '\n');
  std::ostringstream metrics;
  write_csv(metrics, {report});
  write_file(dir / "metrics.csv", metrics.str());
  write_file(dir / "config.txt", config_text(c));
  std::cout << report.variant << " base=" << format_percent(report.base_acc)
            << " novel=" << format_percent(report.novel_acc) << " hm=" << format_percent(report.hm) << '\n';
  return kExitOk;
}

int cmd_ablate(const CommonOptions& o) {
  const auto c = resolve(o, "train.seed");
  const auto dir =
      prepare_out(o, {"ablation.csv", "summary.csv", "reports.txt", "zero_shot.csv", "config.txt"});
  const auto ctx = make_context(c);
  const auto variants = builtin_grid(c.ablate.grid, c.run, c.encoder.layers);
  auto reports = run_ablation(ctx, variants, c.ablate.seeds);
  std::vector<RunReport> zero_shot;
  for (auto seed : c.ablate.seeds) zero_shot.push_back(run_zero_shot(ctx, seed));

  std::ostringstream records, table, summary, zs;
  for (auto& r : reports) {
    r.config = merged_snapshot(c, r.config);
    records << to_record(r) << '\n';
  }
  write_csv(table, reports);
  const auto rows = summarize(reports);
  write_summary_csv(summary, rows);
  write_csv(zs, zero_shot);
  write_file(dir / "reports.txt", records.str());
  write_file(dir / "ablation.csv", table.str());
  write_file(dir / "summary.csv", summary.str());
  write_file(dir / "zero_shot.csv", zs.str());
  write_file(dir / "config.txt", config_text(c));

  std::cout << summary.str();
  std::size_t failures = 0;
  for (const auto& r : reports) failures += !r.ok();
  if (failures) std::cerr << "warning: " << failures << " grid cell(s) failed; see reports.txt\n";
  return kExitOk;
}

// Finite-difference check of the full objective, through both prompted towers,
// with respect to every learnable prompt-side parameter.
int cmd_gradcheck(const CommonOptions& o) {
  const auto c = resolve(o, "train.seed");
  const auto [r, names] = cli::objective_grad_check(c);
  std::cout << "max_rel_error=" << format_double(r.max_rel_error, 6) << " probes=" << r.probes
            << " worst=" << names[r.worst_input] << " worst_analytic=" << format_double(r.worst_analytic, 9) << '\n';
  if (!(r.max_rel_error < 1e-4)) throw NumericError("gradient check failed, max relative error " + format_double(r.max_rel_error, 6));
  return kExitOk;
}

int report_error(int code, const std::string& kind, const std::string& message) {
  std::cerr << "error code=" << code << " kind=" << kind << " message=" << escape_value(message) << '\n';
  return code;
}

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfiguration:
    case ErrorKind::kTemplate:
    case ErrorKind::kVocabulary:
    case ErrorKind::kSpec:
      return kExitConfig;
    case ErrorKind::kNumeric:
      return kExitNumeric;
    case ErrorKind::kIo:
      return kExitIo;
    case ErrorKind::kProtocol:
      return kExitProtocol;
    default:
      return kExitGeneric;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical cross-modal prompt learning on a desk-scale dual encoder"};
  app.require_subcommand(1);
  CommonOptions opts;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const CommonOptions&);
  };
  const Command commands[] = {
      {"gen-data", "generate the synthetic dataset", cmd_gen_data},
      {"pretrain", "pretrain and freeze the teacher dual encoder", cmd_pretrain},
      {"train", "train prompts on the few-shot base split", cmd_train},
      {"eval", "evaluate trained prompts, or zero-shot without them", cmd_eval},
      {"ablate", "run an ablation grid over seeds", cmd_ablate},
      {"gradcheck", "finite-difference check of the full objective", cmd_gradcheck},
  };
  const Command* chosen = nullptr;
  for (const auto& cmd : commands) {
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common(sub, opts);
    sub->callback([&chosen, &cmd] { chosen = &cmd; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(kExitConfig, "usage", e.what());
  }
  try {
    return chosen->run(opts);
  } catch (const MissingCheckpoint& e) {
    return report_error(kExitMissingCheckpoint, "missing_checkpoint", e.what());
  } catch (const Error& e) {
    return report_error(exit_code_for(e.kind()), std::string(error_kind_name(e.kind())), e.what());
  } catch (const std::exception& e) {
    return report_error(kExitGeneric, "internal", e.what());
  }
}
