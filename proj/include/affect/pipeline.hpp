#pragma once

// One full pass through the agent pipeline (Planner -> Retriever -> Filter ->
// RAAF/MB-MoE -> Generator), parameterized by the ablation flags so training
// rollouts, counterfactual variants, and evaluation ablations share one code
// path. Also hosts the SFT warm start and the momentum-SGD optimizer.

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "affect/agents.hpp"
#include "affect/config.hpp"
#include "affect/envsynth.hpp"
#include "affect/fusion.hpp"
#include "affect/numerics.hpp"
#include "affect/retrieval.hpp"

namespace affect {

struct System {
  PolicyBundle policy;
  RaafParams raaf;
  MoeParams moe;

  std::vector<Param*> trainable_params() {
    std::vector<Param*> out = policy.actor_params();
    for (Param* p : policy.critic_params()) out.push_back(p);
    for (Param* p : raaf.params()) out.push_back(p);
    for (Param* p : moe.params()) out.push_back(p);
    return out;
  }
};

inline System make_system(const RunConfig& cfg, Rng& rng) {
  System sys;
  NetDims dims{cfg.synth.dim, cfg.synth.num_labels, cfg.agents.hidden};
  sys.policy = make_policy(dims, cfg.agents.planner_sigma, rng);
  sys.raaf = RaafParams(std::size_t(cfg.synth.dim), rng);
  sys.moe = MoeParams(std::size_t(cfg.synth.dim), cfg.fusion.num_experts,
                      cfg.fusion.top_k, std::size_t(cfg.fusion.expert_hidden), rng);
  return sys;
}

struct AgentStep {
  Observation obs;
  AgentAction action;
  double logprob = 0.0;      // under the acting policy
  double sft_logprob = 0.0;  // under the frozen SFT reference
  double value = 0.0;        // critic estimate at rollout time
};

struct EpisodeTrace {
  ModalSample sample;  // after any modality drop
  int gold = -1;
  int pred = -1;
  Vec x_t_eff;
  std::array<std::vector<Vec>, 3> perc_vectors;     // RAAF evidence / substitution
  std::vector<const EvidenceItem*> candidates;      // filter input (index-owned)
  std::vector<const EvidenceItem*> kept;
  Vec gen_prefix;                                   // non-fused generator slots
  Vec fused_v, fused_a;
  double routing_entropy = 0.0;
  bool planner_degenerate = false;  // queries came from the label scheme
  bool filter_bypassed = false;
  AgentStep planner, filter, generator;
};

struct EpisodeOptions {
  bool greedy = false;
  AblationFlags flags;
  bool record_sft = false;            // record logprobs under the SFT reference
  const EpisodeTrace* reuse = nullptr;  // counterfactuals reuse actions on equal obs
};

namespace detail {

inline bool same_features(const Observation& a, const Observation& b) {
  return a.role == b.role && a.features == b.features &&
         a.item_features == b.item_features;
}

}  // namespace detail

// Executes the pipeline once. Sampled or greedy actions per `opt.greedy`;
// when `opt.reuse` is set, an agent whose observation is identical to the
// reused trace's repeats that action instead of re-deciding.
inline EpisodeTrace run_episode(System& sys, const EvidenceIndex& index,
                                const RunConfig& cfg, const ModalSample& input,
                                const EpisodeOptions& opt, Rng& rng) {
  const AblationFlags& fl = opt.flags;
  const NetDims& dims = sys.policy.dims;
  EpisodeTrace tr;
  tr.gold = input.label;
  tr.sample = input;
  if (fl.drop_modality != DropModality::None &&
      tr.sample.present[int(fl.drop_modality)])
    tr.sample = apply_missing(tr.sample, Modality(int(fl.drop_modality)));

  // Perceptual retrieval (environment side; disabled with the evidence).
  bool evidence_on = !fl.no_retrieval && !fl.no_substitution;
  std::array<std::vector<ScoredItem>, 3> perceptual;
  if (evidence_on) perceptual = retrieve_perceptual(index, tr.sample, cfg.retrieval.k_perc);
  for (int m = 0; m < 3; ++m)
    for (const ScoredItem& s : perceptual[m])
      tr.perc_vectors[m].push_back(s.item->modality(Modality(m)));

  // Text slot: missing text is substituted with the top-1 perceptual text hit.
  if (tr.sample.has(Modality::Text))
    tr.x_t_eff = tr.sample.x_t;
  else if (!tr.perc_vectors[int(Modality::Text)].empty())
    tr.x_t_eff = tr.perc_vectors[int(Modality::Text)].front();
  else
    tr.x_t_eff.assign(std::size_t(dims.d), 0.0);

  // --- Planner ---
  QuerySet queries;
  bool degenerate = fl.no_planner || fl.naive_rag;
  tr.planner_degenerate = degenerate;
  if (degenerate) {
    // Degenerate scheme: all three queries are the corpus text centroid of a
    // uniformly drawn candidate label.
    int label = int(rng.integer(std::uint64_t(dims.C)));
    const Vec& cen = index.label_centroid(Modality::Text, label);
    queries.q_sup = queries.q_conf = queries.q_count = cen;
  } else {
    tr.planner.obs = build_planner_obs(tr.sample, tr.x_t_eff, dims.C);
    if (opt.reuse && detail::same_features(tr.planner.obs, opt.reuse->planner.obs)) {
      tr.planner.action = opt.reuse->planner.action;
    } else {
      ActResult res = act(sys.policy, tr.planner.obs, opt.greedy, rng);
      tr.planner.action = res.action;
      tr.planner.logprob = res.logprob;
      tr.planner.value = value_of(sys.policy, tr.planner.obs);
      if (opt.record_sft && sys.policy.sft)
        tr.planner.sft_logprob = logprob_of(dims, *sys.policy.sft,
                                            sys.policy.planner_sigma, tr.planner.obs,
                                            tr.planner.action);
    }
    queries.q_sup = tr.planner.action.queries[0];
    queries.q_conf = tr.planner.action.queries[1];
    queries.q_count = tr.planner.action.queries[2];
  }

  // --- Cognitive retrieval + Filter ---
  RetrievalResult retr;
  retr.perceptual = perceptual;
  bool cognitive_on = !fl.no_retrieval && !fl.naive_rag;
  if (cognitive_on) {
    for (int q = 0; q < 3; ++q)
      retr.cognitive[q] =
          index.knn(queries.get(QueryKind(q)), Modality::Text, cfg.retrieval.k_cog);
    tr.candidates =
        assemble_candidates(retr, fl.no_confuse_evidence, fl.no_counter_evidence);
  }

  if (fl.naive_rag) {
    // Perceptual evidence passed raw to the generator, no filter decision.
    std::vector<std::int64_t> seen;
    for (int m = 0; m < 3; ++m)
      for (const ScoredItem& s : retr.perceptual[m]) {
        if (std::find(seen.begin(), seen.end(), s.item->id) != seen.end()) continue;
        seen.push_back(s.item->id);
        tr.kept.push_back(s.item);
      }
  } else if (!tr.candidates.empty()) {
    tr.filter.obs = build_filter_obs(tr.x_t_eff, tr.candidates, dims.C);
    if (fl.no_filter) {
      tr.filter_bypassed = true;
      tr.filter.action.role = Role::Filter;
      tr.filter.action.keep =
          bypass_decisions(retr, tr.candidates, cfg.retrieval.k_cog,
                           fl.no_confuse_evidence, fl.no_counter_evidence);
    } else if (opt.reuse && detail::same_features(tr.filter.obs, opt.reuse->filter.obs)) {
      tr.filter.action = opt.reuse->filter.action;
    } else {
      ActResult res = act(sys.policy, tr.filter.obs, opt.greedy, rng);
      tr.filter.action = res.action;
      tr.filter.logprob = res.logprob;
      tr.filter.value = value_of(sys.policy, tr.filter.obs);
      if (opt.record_sft && sys.policy.sft)
        tr.filter.sft_logprob = logprob_of(dims, *sys.policy.sft,
                                           sys.policy.planner_sigma, tr.filter.obs,
                                           tr.filter.action);
    }
    for (std::size_t i = 0; i < tr.candidates.size(); ++i)
      if (tr.filter.action.keep[i]) tr.kept.push_back(tr.candidates[i]);
  }

  // --- Fusion (values only at rollout; recomputed on tape during updates) ---
  {
    Tape tape;
    FusedState fs = fuse_pipeline(tape, sys.raaf, sys.moe, tr.sample, tr.perc_vectors);
    tr.fused_v = tape.value(fs.fused_v);
    tr.fused_a = tape.value(fs.fused_a);
    tr.routing_entropy = fs.routing_entropy;
  }

  // --- Generator ---
  tr.gen_prefix = generator_prefix(tr.x_t_eff, tr.kept, dims.C);
  tr.generator.obs = build_generator_obs(tr.gen_prefix, tr.fused_v, tr.fused_a);
  if (opt.reuse && detail::same_features(tr.generator.obs, opt.reuse->generator.obs)) {
    tr.generator.action = opt.reuse->generator.action;
  } else {
    ActResult res = act(sys.policy, tr.generator.obs, opt.greedy, rng);
    tr.generator.action = res.action;
    tr.generator.logprob = res.logprob;
    tr.generator.value = value_of(sys.policy, tr.generator.obs);
    if (opt.record_sft && sys.policy.sft)
      tr.generator.sft_logprob = logprob_of(dims, *sys.policy.sft,
                                            sys.policy.planner_sigma, tr.generator.obs,
                                            tr.generator.action);
  }
  tr.pred = tr.generator.action.label;
  return tr;
}

// ---------------------------------------------------------------------------
// Optimizer

struct SgdMomentum {
  double lr = 0.01;
  double momentum = 0.9;
  double grad_clip = 0.0;  // global-norm clip; <= 0 disables
  std::vector<Vec> velocity;

  SgdMomentum() = default;
  SgdMomentum(double lr_, double mom, double clip = 0.0)
      : lr(lr_), momentum(mom), grad_clip(clip) {}

  void step(const std::vector<Param*>& params) {
    if (velocity.size() != params.size()) {
      velocity.clear();
      for (Param* p : params) velocity.emplace_back(p->size(), 0.0);
    }
    double scale = 1.0;
    if (grad_clip > 0.0) {
      double sq = 0.0;
      for (const Param* p : params)
        for (double g : p->grad) sq += g * g;
      double norm = std::sqrt(sq);
      if (norm > grad_clip) scale = grad_clip / norm;
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      Param* p = params[i];
      for (std::size_t j = 0; j < p->size(); ++j) {
        velocity[i][j] = momentum * velocity[i][j] + scale * p->grad[j];
        p->value[j] -= lr * velocity[i][j];
      }
    }
  }
};

// ---------------------------------------------------------------------------
// SFT warm start: behavior cloning of the heuristic teachers, actor only.
// Fusion runs forward (its outputs feed the generator observation) but is not
// instruction-tuned; the critic is untouched. The trained actor is frozen as
// the SFT reference.

inline void sft_warm_start(System& sys, const EvidenceIndex& index, const RunConfig& cfg,
                           const std::vector<ModalSample>& train, int epochs, Rng& rng) {
  const NetDims& dims = sys.policy.dims;
  std::vector<Param*> actor_ps = sys.policy.actor_params();
  SgdMomentum opt(cfg.train.sft_lr, cfg.train.momentum, cfg.train.grad_clip);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < epochs; ++epoch) {
    // Fisher-Yates with the run rng; deterministic given the seed.
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[std::size_t(rng.integer(i))]);

    for (std::size_t idx : order) {
      const ModalSample& sample = train[idx];
      QuerySet q = teacher_queries(index, cfg.synth, sample, sample.x_t);
      RetrievalResult retr =
          retrieve_dual(index, sample, q, cfg.retrieval.k_cog, cfg.retrieval.k_perc);
      std::vector<const EvidenceItem*> candidates = assemble_candidates(retr);
      std::array<int, 2> top2 = perceptual_top2(retr, dims.C);
      std::vector<std::uint8_t> keep = teacher_filter(candidates, top2);
      std::vector<const EvidenceItem*> kept;
      for (std::size_t i = 0; i < candidates.size(); ++i)
        if (keep[i]) kept.push_back(candidates[i]);
      int label = teacher_label(kept, dims.C, top2[0]);

      Vec fused_v, fused_a;
      {
        Tape tape;
        std::array<std::vector<Vec>, 3> perc;
        for (int m = 0; m < 3; ++m)
          for (const ScoredItem& s : retr.perceptual[m])
            perc[m].push_back(s.item->modality(Modality(m)));
        FusedState fs = fuse_pipeline(tape, sys.raaf, sys.moe, sample, perc);
        fused_v = tape.value(fs.fused_v);
        fused_a = tape.value(fs.fused_a);
      }

      AgentAction pa;
      pa.role = Role::Planner;
      pa.queries = {q.q_sup, q.q_conf, q.q_count};
      AgentAction fa;
      fa.role = Role::Filter;
      fa.keep = keep;
      AgentAction ga;
      ga.role = Role::Generator;
      ga.label = label;

      Observation po = build_planner_obs(sample, sample.x_t, dims.C);
      Observation fo = build_filter_obs(sample.x_t, candidates, dims.C);
      Observation go = build_generator_obs(generator_prefix(sample.x_t, kept, dims.C),
                                           fused_v, fused_a);

      Tape tape;
      Tape::Id lp = logprob_node(tape, dims, sys.policy.actor, sys.policy.planner_sigma,
                                 pa, obs_features_node(tape, po));
      if (!candidates.empty())
        lp = tape.add(lp, logprob_node(tape, dims, sys.policy.actor,
                                       sys.policy.planner_sigma, fa, -1,
                                       obs_item_nodes(tape, fo)));
      lp = tape.add(lp, logprob_node(tape, dims, sys.policy.actor,
                                     sys.policy.planner_sigma, ga,
                                     obs_features_node(tape, go)));
      Tape::Id loss = tape.neg(lp);
      zero_grads(actor_ps);
      tape.backward(loss);
      opt.step(actor_ps);
    }
  }
  sys.policy.sft = sys.policy.actor;  // frozen reference copy
}

}  // namespace affect
