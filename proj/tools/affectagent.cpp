// affectagent: dataset synthesis, training, evaluation, and the ablation
// suite for the multi-agent retrieval-augmented emotion pipeline.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "affect/checkpoint.hpp"
#include "affect/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "Path to a JSON run configuration");
  cmd->add_option("--seed", o.seed, "Master seed (overrides the config)");
  cmd->add_option("--out", o.out_dir, "Output directory (overrides the config)");
}

affect::RunConfig resolve_config(const CommonOpts& o) {
  affect::RunConfig cfg;
  if (!o.config_path.empty()) cfg = affect::load_config(o.config_path);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  cfg.synth.seed = cfg.seed;
  cfg.synth.validate();
  cfg.train.validate();
  return cfg;
}

void add_ablation_flags(CLI::App* cmd, affect::AblationFlags& f, std::string& drop) {
  cmd->add_flag("--no-planner", f.no_planner, "Replace queries with the degenerate label scheme");
  cmd->add_flag("--no-filter", f.no_filter, "Bypass the filter (TopK per cognitive list)");
  cmd->add_flag("--no-confuse-evidence", f.no_confuse_evidence, "Drop the confusing cognitive list");
  cmd->add_flag("--no-counter-evidence", f.no_counter_evidence, "Drop the countering cognitive list");
  cmd->add_flag("--no-retrieval", f.no_retrieval, "Zero all evidence inputs");
  cmd->add_flag("--naive-rag", f.naive_rag, "Raw perceptual retrieval only, no planner/filter");
  cmd->add_flag("--no-substitution", f.no_substitution, "Disable missing-modality substitution");
  cmd->add_option("--drop-modality", drop, "Drop a modality at eval: t, v, or a")
      ->check(CLI::IsMember({"none", "t", "v", "a"}));
}

affect::DropModality parse_drop(const std::string& s) {
  if (s == "t") return affect::DropModality::Text;
  if (s == "v") return affect::DropModality::Video;
  if (s == "a") return affect::DropModality::Audio;
  return affect::DropModality::None;
}

affect::Dataset load_dataset(const std::string& dir) {
  affect::Dataset d;
  d.train = affect::read_samples(dir + "/train.jsonl");
  d.test = affect::read_samples(dir + "/test.jsonl");
  d.corpus = affect::read_corpus(dir + "/corpus.jsonl");
  return d;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  affect::require(bool(os), "cannot open for writing: " + path);
  os << text;
  affect::require(bool(os), "write failed: " + path);
}

int cmd_synth(const CommonOpts& opts) {
  affect::RunConfig cfg = resolve_config(opts);
  fs::create_directories(cfg.out_dir);
  affect::Dataset data = affect::generate_dataset(cfg.synth);
  affect::write_samples(cfg.out_dir + "/train.jsonl", data.train);
  affect::write_samples(cfg.out_dir + "/test.jsonl", data.test);
  affect::write_corpus(cfg.out_dir + "/corpus.jsonl", data.corpus);
  json manifest = {{"seed", cfg.seed},
                   {"config_hash", affect::config_hash(cfg)},
                   {"num_labels", cfg.synth.num_labels},
                   {"train_size", data.train.size()},
                   {"test_size", data.test.size()},
                   {"corpus_size", data.corpus.size()},
                   {"spec", cfg.synth}};
  write_text(cfg.out_dir + "/manifest.json", manifest.dump(2) + "\n");
  std::cout << manifest.dump() << "\n";
  return 0;
}

int cmd_train(const CommonOpts& opts, const std::string& data_dir) {
  affect::RunConfig cfg = resolve_config(opts);
  fs::create_directories(cfg.out_dir);
  std::string dir = data_dir.empty() ? cfg.out_dir : data_dir;
  affect::Dataset data = load_dataset(dir);

  std::ofstream metrics(cfg.out_dir + "/metrics.jsonl", std::ios::binary);
  affect::require(bool(metrics), "cannot open metrics log");
  affect::TrainResult result = affect::train_system(cfg, data, &metrics);
  metrics.close();

  affect::save_checkpoint(cfg.out_dir + "/checkpoint.bin", result.system, cfg, false);
  affect::save_checkpoint(cfg.out_dir + "/checkpoint_eval.bin", result.system, cfg, true);

  affect::EvidenceIndex index = affect::build_index(data.corpus);
  affect::EvalResult final_eval =
      affect::evaluate(result.system, index, cfg, data.test, affect::AblationFlags{});
  json summary = {{"config_hash", affect::config_hash(cfg)},
                  {"seed", cfg.seed},
                  {"iterations_completed", result.metrics.size()},
                  {"aborted", result.aborted},
                  {"abort_reason", result.abort_reason},
                  {"test_macro_f1", final_eval.macro_f1},
                  {"test_weighted_f1", final_eval.weighted_f1}};
  write_text(cfg.out_dir + "/train_summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& ckpt_path,
             const std::string& data_dir, affect::AblationFlags flags,
             const std::string& drop) {
  flags.drop_modality = parse_drop(drop);
  affect::LoadedCheckpoint ckpt = affect::load_checkpoint(ckpt_path);
  affect::RunConfig cfg = ckpt.config;
  if (opts.seed) cfg.seed = *opts.seed;
  if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
  fs::create_directories(cfg.out_dir);
  std::string dir = data_dir.empty() ? cfg.out_dir : data_dir;
  affect::Dataset data = load_dataset(dir);
  affect::EvidenceIndex index = affect::build_index(data.corpus);

  affect::EvalReport report =
      affect::make_eval_report(ckpt.system, index, cfg, data.test, flags);
  json j = affect::eval_report_to_json(report, flags);
  write_text(cfg.out_dir + "/eval.json", j.dump(2) + "\n");
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_suite(const CommonOpts& opts, const std::string& data_dir) {
  affect::RunConfig cfg = resolve_config(opts);
  fs::create_directories(cfg.out_dir);
  affect::Dataset data;
  std::string dir = data_dir.empty() ? cfg.out_dir : data_dir;
  if (fs::exists(dir + "/train.jsonl"))
    data = load_dataset(dir);
  else
    data = affect::generate_dataset(cfg.synth);

  affect::TrainResult trained = affect::train_system(cfg, data, nullptr);
  json report = affect::run_suite(cfg, data, trained);
  write_text(cfg.out_dir + "/suite.json", report.dump(2) + "\n");
  std::cout << report.dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-agent retrieval-augmented emotion recognition"};
  app.require_subcommand(1);

  CommonOpts synth_opts, train_opts, eval_opts, suite_opts;
  std::string train_data, eval_data, suite_data, eval_ckpt, eval_drop = "none";
  affect::AblationFlags eval_flags;

  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth, synth_opts);

  CLI::App* train = app.add_subcommand("train", "SFT warm start + MAPPO training");
  add_common(train, train_opts);
  train->add_option("--data", train_data, "Dataset directory (default: --out)");

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  add_common(eval, eval_opts);
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval->add_option("--data", eval_data, "Dataset directory (default: --out)");
  add_ablation_flags(eval, eval_flags, eval_drop);

  CLI::App* suite = app.add_subcommand("suite", "Train and run the full ablation matrix");
  add_common(suite, suite_opts);
  suite->add_option("--data", suite_data, "Dataset directory (synthesized if absent)");

  std::string active;
  try {
    app.parse(argc, argv);
    if (synth->parsed()) return (active = "synth", cmd_synth(synth_opts));
    if (train->parsed()) return (active = "train", cmd_train(train_opts, train_data));
    if (eval->parsed())
      return (active = "eval",
              cmd_eval(eval_opts, eval_ckpt, eval_data, eval_flags, eval_drop));
    if (suite->parsed()) return (active = "suite", cmd_suite(suite_opts, suite_data));
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << json{{"error", e.what()}, {"kind", "usage"}}.dump() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", e.what()}, {"kind", "runtime"}, {"command", active}}.dump()
              << "\n";
    return 1;
  }
}
