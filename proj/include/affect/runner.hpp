#pragma once

// Orchestration above the trainer: greedy evaluation under ablation flags,
// the SFT -> MAPPO training sequence with last-good parameter retention, and
// the consolidated ablation suite (component ladder, coordination/evidence
// rows, and modality-drop rows).

#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affect/checkpoint.hpp"
#include "affect/marl.hpp"

namespace affect {

struct EvalResult {
  double macro_f1 = 0.0;
  double weighted_f1 = 0.0;
  double gap_label = 0.0;  // mean Score_full - Score_label (full pipeline only)
  double gap_rank = 0.0;   // mean Score_full - Score_rank
};

// Greedy, deterministic evaluation of the test split under `flags`. Episode
// rng streams derive from the seed and the sample id, so results do not
// depend on iteration order. Counterfactual gaps are only meaningful (and
// only computed) for the unablated pipeline.
inline EvalResult evaluate(System& sys, const EvidenceIndex& index, const RunConfig& cfg,
                           const std::vector<ModalSample>& test,
                           const AblationFlags& flags, bool with_gaps = false) {
  EvalResult out;
  std::vector<int> gold, pred;
  Rng base(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  for (const ModalSample& sample : test) {
    Rng ep_rng = base.spawn(std::uint64_t(sample.id));
    if (with_gaps) {
      RunConfig vcfg = cfg;
      vcfg.ablation = flags;
      Trajectory tr = rollout_episode(sys, index, vcfg, sample, ep_rng, /*greedy=*/true);
      gold.push_back(tr.main.gold);
      pred.push_back(tr.main.pred);
      out.gap_label += tr.score_full - tr.score_label;
      out.gap_rank += tr.score_full - tr.score_rank;
    } else {
      EpisodeOptions opt;
      opt.greedy = true;
      opt.flags = flags;
      EpisodeTrace tr = run_episode(sys, index, cfg, sample, opt, ep_rng);
      gold.push_back(tr.gold);
      pred.push_back(tr.pred);
    }
  }
  out.macro_f1 = score_f1(pred, gold, F1Mode::Macro);
  out.weighted_f1 = score_f1(pred, gold, F1Mode::Weighted);
  if (with_gaps && !test.empty()) {
    out.gap_label /= double(test.size());
    out.gap_rank /= double(test.size());
  }
  return out;
}

struct EvalReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  EvalResult condition;
  EvalResult full;  // same checkpoint, flags off, same seed
  double delta_macro = 0.0;
  double delta_weighted = 0.0;
};

inline nlohmann::json eval_report_to_json(const EvalReport& r, const AblationFlags& flags) {
  auto result = [](const EvalResult& e) {
    return nlohmann::json{{"macro_f1", e.macro_f1},
                          {"weighted_f1", e.weighted_f1},
                          {"gap_label", e.gap_label},
                          {"gap_rank", e.gap_rank}};
  };
  return {{"config_hash", r.config_hash},
          {"seed", r.seed},
          {"flags", flags},
          {"condition", result(r.condition)},
          {"full", result(r.full)},
          {"delta_macro", r.delta_macro},
          {"delta_weighted", r.delta_weighted}};
}

inline EvalReport make_eval_report(System& sys, const EvidenceIndex& index,
                                   const RunConfig& cfg,
                                   const std::vector<ModalSample>& test,
                                   const AblationFlags& flags) {
  EvalReport r;
  r.config_hash = config_hash(cfg);
  r.seed = cfg.seed;
  r.full = evaluate(sys, index, cfg, test, AblationFlags{}, /*with_gaps=*/true);
  r.condition = flags == AblationFlags{} ? r.full : evaluate(sys, index, cfg, test, flags);
  r.delta_macro = r.condition.macro_f1 - r.full.macro_f1;
  r.delta_weighted = r.condition.weighted_f1 - r.full.weighted_f1;
  return r;
}

// ---------------------------------------------------------------------------
// Training orchestration

struct TrainResult {
  System system;           // final parameters (last-good on abort)
  System post_sft;         // snapshot right after the warm start
  std::vector<IterationMetrics> metrics;
  bool aborted = false;
  std::string abort_reason;
};

// SFT warm start followed by the configured number of MAPPO iterations. On a
// non-finite training signal the parameters from the last completed iteration
// are retained and training stops.
inline TrainResult train_system(const RunConfig& cfg, const Dataset& data,
                                std::ostream* metrics_log = nullptr) {
  Rng rng(cfg.seed);
  TrainResult out;
  out.system = make_system(cfg, rng);
  EvidenceIndex index = build_index(data.corpus);

  Rng sft_rng = rng.spawn(1);
  sft_warm_start(out.system, index, cfg, data.train, cfg.train.sft_epochs, sft_rng);
  out.post_sft = out.system;

  TrainerState state(cfg.train);
  Rng train_rng = rng.spawn(2);
  std::vector<Param*> params = out.system.trainable_params();
  for (int iter = 0; iter < cfg.train.iterations; ++iter) {
    Vec last_good = flatten(params);
    try {
      IterationMetrics m =
          mappo_iteration(out.system, index, cfg, data.train, state, train_rng, iter);
      out.metrics.push_back(m);
      if (metrics_log) *metrics_log << metrics_to_json(m).dump() << "\n";
    } catch (const std::exception& e) {
      unflatten(last_good, params);
      out.aborted = true;
      out.abort_reason = e.what();
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ablation suite

struct SuiteRow {
  std::string name;
  AblationFlags flags;
  bool use_final = true;   // false -> post-SFT parameters
  bool untrained = false;  // fresh initialization (component-ladder baseline)
};

inline std::vector<SuiteRow> suite_rows() {
  std::vector<SuiteRow> rows;
  auto with = [](auto mod) {
    AblationFlags f;
    mod(f);
    return f;
  };
  // Component ladder: ablate training stage and retrieval stack together.
  rows.push_back({"zero_retrieval", with([](AblationFlags& f) { f.no_retrieval = true; }),
                  false, true});
  rows.push_back({"sft_only", with([](AblationFlags& f) { f.no_retrieval = true; }),
                  false, false});
  rows.push_back({"naive_rag", with([](AblationFlags& f) { f.naive_rag = true; }),
                  false, false});
  rows.push_back({"full", AblationFlags{}, true, false});
  // Coordination / evidence-structure rows (all on the final parameters).
  rows.push_back({"no_planner", with([](AblationFlags& f) { f.no_planner = true; })});
  rows.push_back({"no_filter", with([](AblationFlags& f) { f.no_filter = true; })});
  rows.push_back({"no_planner_no_filter", with([](AblationFlags& f) {
                    f.no_planner = f.no_filter = true;
                  })});
  rows.push_back({"no_counter", with([](AblationFlags& f) {
                    f.no_counter_evidence = true;
                  })});
  rows.push_back({"no_confuse_no_counter", with([](AblationFlags& f) {
                    f.no_confuse_evidence = f.no_counter_evidence = true;
                  })});
  // Missing-modality rows, with and without the substitution path.
  for (DropModality d : {DropModality::Text, DropModality::Video, DropModality::Audio}) {
    std::string tag(1, "tva"[int(d)]);
    rows.push_back({"drop_" + tag, with([d](AblationFlags& f) { f.drop_modality = d; })});
    rows.push_back({"drop_" + tag + "_no_subst", with([d](AblationFlags& f) {
                      f.drop_modality = d;
                      f.no_substitution = true;
                    })});
  }
  return rows;
}

inline nlohmann::json run_suite(const RunConfig& cfg, const Dataset& data,
                                TrainResult& trained) {
  EvidenceIndex index = build_index(data.corpus);
  Rng fresh_rng(cfg.seed);
  System untrained = make_system(cfg, fresh_rng);

  EvalResult full =
      evaluate(trained.system, index, cfg, data.test, AblationFlags{}, /*with_gaps=*/true);

  nlohmann::json rows = nlohmann::json::array();
  for (const SuiteRow& row : suite_rows()) {
    System& sys = row.untrained ? untrained
                  : row.use_final ? trained.system
                                  : trained.post_sft;
    EvalResult r = (row.name == "full") ? full
                                        : evaluate(sys, index, cfg, data.test, row.flags);
    rows.push_back({{"name", row.name},
                    {"flags", row.flags},
                    {"macro_f1", r.macro_f1},
                    {"weighted_f1", r.weighted_f1},
                    {"delta_macro", r.macro_f1 - full.macro_f1},
                    {"delta_weighted", r.weighted_f1 - full.weighted_f1}});
  }
  return {{"config_hash", config_hash(cfg)},
          {"seed", cfg.seed},
          {"full_macro_f1", full.macro_f1},
          {"full_weighted_f1", full.weighted_f1},
          {"gap_label", full.gap_label},
          {"gap_rank", full.gap_rank},
          {"rows", rows}};
}

}  // namespace affect
