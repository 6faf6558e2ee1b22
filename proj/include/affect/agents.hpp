#pragma once

// The three decision agents (Query Planner, Evidence Filter, Emotion
// Generator) as heads over a shared trunk MLP, plus the shared critic head.
// Observations are deterministic encodings; actions carry exact joint
// log-probabilities. Heuristic teacher policies for the SFT warm start live
// here as well.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "affect/config.hpp"
#include "affect/envsynth.hpp"
#include "affect/fusion.hpp"
#include "affect/numerics.hpp"
#include "affect/retrieval.hpp"

namespace affect {

enum class Role : int { Planner = 0, Filter = 1, Generator = 2 };

struct NetDims {
  int d = 16;       // per-modality feature dim
  int C = 6;        // label count
  int hidden = 64;  // trunk width

  int planner_obs_dim() const { return 3 * d + C; }
  int filter_item_dim() const { return 2 * d + 1 + C; }
  int generator_obs_dim() const { return 4 * d + C; }  // x_t + ev mean + hist + 2 fused
  int obs_dim() const {
    return std::max({planner_obs_dim(), filter_item_dim(), generator_obs_dim()});
  }
  int trunk_input_dim() const { return 3 + obs_dim(); }  // role one-hot prefix
};

struct Observation {
  Role role = Role::Planner;
  Vec features;                 // planner/generator encoding
  std::vector<Vec> item_features;  // filter: one vector per candidate
};

struct AgentAction {
  Role role = Role::Planner;
  std::array<Vec, 3> queries;       // planner: q_sup, q_conf, q_count
  std::vector<std::uint8_t> keep;   // filter: Yes/No per candidate
  int label = -1;                   // generator
};

// Actor = shared trunk + three role heads. The critic head and the frozen
// SFT copy live beside it in PolicyBundle.
struct ActorParams {
  MLPParams trunk;           // trunk_input -> hidden -> hidden (tanh)
  MLPParams planner_head;    // hidden -> 3d (Gaussian mean)
  MLPParams filter_head;     // hidden -> 1 (Bernoulli logit per item)
  MLPParams generator_head;  // hidden -> C logits

  std::vector<Param*> params() {
    std::vector<Param*> out;
    for (auto* ps : {&trunk, &planner_head, &filter_head, &generator_head})
      for (Param* p : ps->params()) out.push_back(p);
    return out;
  }
};

struct PolicyBundle {
  NetDims dims;
  double planner_sigma = 0.3;
  ActorParams actor;
  MLPParams critic_head;  // hidden -> 1
  std::optional<ActorParams> sft;  // frozen after warm start

  std::vector<Param*> actor_params() { return actor.params(); }
  std::vector<Param*> critic_params() { return critic_head.params(); }
};

inline ActorParams make_actor(const NetDims& dims, Rng& rng) {
  ActorParams a;
  std::size_t in = dims.trunk_input_dim(), h = dims.hidden;
  a.trunk = make_mlp("trunk", {in, h, h}, rng);
  a.planner_head = make_mlp("head.planner", {h, std::size_t(3 * dims.d)}, rng);
  a.filter_head = make_mlp("head.filter", {h, 1}, rng);
  a.generator_head = make_mlp("head.generator", {h, std::size_t(dims.C)}, rng);
  return a;
}

inline PolicyBundle make_policy(const NetDims& dims, double planner_sigma, Rng& rng) {
  PolicyBundle b;
  b.dims = dims;
  b.planner_sigma = planner_sigma;
  b.actor = make_actor(dims, rng);
  b.critic_head = make_mlp("critic", {std::size_t(dims.hidden), 1}, rng);
  return b;
}

// ---------------------------------------------------------------------------
// Observation builders (deterministic encodings)

inline Vec one_hot(int i, int n) {
  Vec v(n, 0.0);
  if (i >= 0 && i < n) v[i] = 1.0;
  return v;
}

inline double cosine(const Vec& a, const Vec& b) {
  double na = l2_norm(a), nb = l2_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

// Planner sees the raw multimodal features plus the candidate label set
// (encoded as the all-ones indicator over C labels).
inline Observation build_planner_obs(const ModalSample& s, const Vec& x_t_eff, int C) {
  Observation o;
  o.role = Role::Planner;
  o.features = x_t_eff;
  o.features.insert(o.features.end(), s.x_v.begin(), s.x_v.end());
  o.features.insert(o.features.end(), s.x_a.begin(), s.x_a.end());
  Vec cand(C, 1.0);
  o.features.insert(o.features.end(), cand.begin(), cand.end());
  return o;
}

// Filter judges each candidate separately: concat(x_t, item text embedding,
// cosine(x_t, item text), item one-hot label).
inline Observation build_filter_obs(const Vec& x_t_eff,
                                    const std::vector<const EvidenceItem*>& candidates,
                                    int C) {
  Observation o;
  o.role = Role::Filter;
  for (const EvidenceItem* e : candidates) {
    Vec f = x_t_eff;
    f.insert(f.end(), e->e_t.begin(), e->e_t.end());
    f.push_back(cosine(x_t_eff, e->e_t));
    Vec lab = one_hot(e->label, C);
    f.insert(f.end(), lab.begin(), lab.end());
    o.item_features.push_back(std::move(f));
  }
  return o;
}

// Non-fused part of the generator observation: x_t, mean of selected evidence
// text embeddings, selected-evidence label histogram (normalized). Both slots
// are zero when nothing was kept.
inline Vec generator_prefix(const Vec& x_t_eff,
                            const std::vector<const EvidenceItem*>& kept, int C) {
  Vec prefix = x_t_eff;
  Vec mean(x_t_eff.size(), 0.0);
  Vec hist(C, 0.0);
  if (!kept.empty()) {
    for (const EvidenceItem* e : kept) {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += e->e_t[i];
      hist[e->label] += 1.0;
    }
    for (double& x : mean) x /= double(kept.size());
    for (double& x : hist) x /= double(kept.size());
  }
  prefix.insert(prefix.end(), mean.begin(), mean.end());
  prefix.insert(prefix.end(), hist.begin(), hist.end());
  return prefix;
}

inline Observation build_generator_obs(const Vec& prefix, const Vec& fused_v,
                                       const Vec& fused_a) {
  Observation o;
  o.role = Role::Generator;
  o.features = prefix;
  o.features.insert(o.features.end(), fused_v.begin(), fused_v.end());
  o.features.insert(o.features.end(), fused_a.begin(), fused_a.end());
  return o;
}

// ---------------------------------------------------------------------------
// Policy forward passes (tape-native, so fused features can carry gradients)

// role one-hot ++ features ++ zero padding, as a tape node.
inline Tape::Id trunk_input_node(Tape& tape, const NetDims& dims, Role role,
                                 Tape::Id features) {
  require(int(tape.dim(features)) <= dims.obs_dim(), "trunk_input: features too wide");
  Vec prefix(3, 0.0);
  prefix[int(role)] = 1.0;
  Tape::Id in = tape.concat(tape.constant(prefix), features);
  int pad = dims.obs_dim() - int(tape.dim(features));
  if (pad > 0) in = tape.concat(in, tape.constant(Vec(pad, 0.0)));
  return in;
}

inline Tape::Id trunk_forward(Tape& tape, const NetDims& dims, ActorParams& actor,
                              Role role, Tape::Id features) {
  return mlp_forward(tape, actor.trunk, trunk_input_node(tape, dims, role, features));
}

inline Tape::Id planner_mean_node(Tape& tape, const NetDims& dims, ActorParams& actor,
                                  Tape::Id features) {
  return mlp_forward(tape, actor.planner_head,
                     trunk_forward(tape, dims, actor, Role::Planner, features));
}

inline Tape::Id filter_logits_node(Tape& tape, const NetDims& dims, ActorParams& actor,
                                   const std::vector<Tape::Id>& items) {
  std::vector<Tape::Id> logits;
  logits.reserve(items.size());
  for (Tape::Id it : items)
    logits.push_back(mlp_forward(tape, actor.filter_head,
                                 trunk_forward(tape, dims, actor, Role::Filter, it)));
  return tape.stack(logits);
}

inline Tape::Id generator_logits_node(Tape& tape, const NetDims& dims, ActorParams& actor,
                                      Tape::Id features) {
  return mlp_forward(tape, actor.generator_head,
                     trunk_forward(tape, dims, actor, Role::Generator, features));
}

// Joint log-probability of `action` under `actor`, as a tape node. For the
// filter, `items` are per-candidate feature nodes; otherwise `features` is
// the single observation node.
inline Tape::Id logprob_node(Tape& tape, const NetDims& dims, ActorParams& actor,
                             double planner_sigma, const AgentAction& action,
                             Tape::Id features, const std::vector<Tape::Id>& items = {}) {
  switch (action.role) {
    case Role::Planner: {
      Vec flat;
      for (const Vec& q : action.queries) flat.insert(flat.end(), q.begin(), q.end());
      require(int(flat.size()) == 3 * dims.d, "logprob: planner action shape mismatch");
      return tape.gaussian_logprob(planner_mean_node(tape, dims, actor, features), flat,
                                   planner_sigma);
    }
    case Role::Filter: {
      require(action.keep.size() == items.size(), "logprob: filter action shape mismatch");
      return tape.bernoulli_logprob(filter_logits_node(tape, dims, actor, items),
                                    action.keep);
    }
    default: {
      require(action.label >= 0 && action.label < dims.C,
              "logprob: generator label out of range");
      Tape::Id lsm = tape.log_softmax(generator_logits_node(tape, dims, actor, features));
      return tape.pick(lsm, std::size_t(action.label));
    }
  }
}

inline Tape::Id obs_features_node(Tape& tape, const Observation& obs) {
  return tape.constant(obs.features);
}

inline std::vector<Tape::Id> obs_item_nodes(Tape& tape, const Observation& obs) {
  std::vector<Tape::Id> out;
  for (const Vec& f : obs.item_features) out.push_back(tape.constant(f));
  return out;
}

inline double logprob_of(const NetDims& dims, ActorParams& actor, double planner_sigma,
                         const Observation& obs, const AgentAction& action) {
  Tape tape;
  Tape::Id lp;
  if (obs.role == Role::Filter)
    lp = logprob_node(tape, dims, actor, planner_sigma, action, -1,
                      obs_item_nodes(tape, obs));
  else
    lp = logprob_node(tape, dims, actor, planner_sigma, action,
                      obs_features_node(tape, obs));
  return tape.value(lp)[0];
}

inline double logprob_of(PolicyBundle& bundle, const Observation& obs,
                         const AgentAction& action) {
  return logprob_of(bundle.dims, bundle.actor, bundle.planner_sigma, obs, action);
}

// Critic value for an observation. The filter's per-item observations are
// summarized by their mean feature vector.
inline Tape::Id value_node(Tape& tape, PolicyBundle& bundle, Role role, Tape::Id features) {
  return mlp_forward(tape, bundle.critic_head,
                     trunk_forward(tape, bundle.dims, bundle.actor, role, features));
}

inline Vec filter_mean_features(const Observation& obs) {
  require(!obs.item_features.empty(), "filter obs: no candidates");
  Vec mean(obs.item_features[0].size(), 0.0);
  for (const Vec& f : obs.item_features)
    for (std::size_t i = 0; i < f.size(); ++i) mean[i] += f[i];
  for (double& x : mean) x /= double(obs.item_features.size());
  return mean;
}

inline double value_of(PolicyBundle& bundle, const Observation& obs) {
  Tape tape;
  Vec feats = obs.role == Role::Filter ? filter_mean_features(obs) : obs.features;
  return tape.value(value_node(tape, bundle, obs.role, tape.constant(feats)))[0];
}

// ---------------------------------------------------------------------------
// Action sampling

struct ActResult {
  AgentAction action;
  double logprob = 0.0;
};

inline ActResult act_planner(PolicyBundle& b, const Observation& obs, bool greedy,
                             Rng& rng) {
  Tape tape;
  Vec mean =
      tape.value(planner_mean_node(tape, b.dims, b.actor, tape.constant(obs.features)));
  AgentAction a;
  a.role = Role::Planner;
  int d = b.dims.d;
  for (int q = 0; q < 3; ++q) {
    a.queries[q].assign(mean.begin() + q * d, mean.begin() + (q + 1) * d);
    if (!greedy)
      for (double& x : a.queries[q]) x += b.planner_sigma * rng.normal();
  }
  return {a, logprob_of(b, obs, a)};
}

inline ActResult act_filter(PolicyBundle& b, const Observation& obs, bool greedy,
                            Rng& rng) {
  Tape tape;
  Vec logits = tape.value(
      filter_logits_node(tape, b.dims, b.actor, obs_item_nodes(tape, obs)));
  AgentAction a;
  a.role = Role::Filter;
  for (double z : logits) {
    double p = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    bool yes = greedy ? (z >= 0.0) : (rng.uniform() < p);
    a.keep.push_back(yes ? 1 : 0);
  }
  return {a, logprob_of(b, obs, a)};
}

inline ActResult act_generator(PolicyBundle& b, const Observation& obs, bool greedy,
                               Rng& rng) {
  Tape tape;
  Vec probs = tape.value(tape.softmax(
      generator_logits_node(tape, b.dims, b.actor, tape.constant(obs.features))));
  AgentAction a;
  a.role = Role::Generator;
  if (greedy) {
    a.label = int(std::max_element(probs.begin(), probs.end()) - probs.begin());
  } else {
    double u = rng.uniform(), cum = 0.0;
    a.label = int(probs.size()) - 1;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      cum += probs[i];
      if (u < cum) {
        a.label = int(i);
        break;
      }
    }
  }
  return {a, logprob_of(b, obs, a)};
}

// Sample mode draws from the head's distribution; greedy returns its mode.
// Either way the returned logprob is exactly what logprob_of assigns.
inline ActResult act(PolicyBundle& b, const Observation& obs, bool greedy, Rng& rng) {
  switch (obs.role) {
    case Role::Planner: return act_planner(b, obs, greedy, rng);
    case Role::Filter: return act_filter(b, obs, greedy, rng);
    default: return act_generator(b, obs, greedy, rng);
  }
}

// ---------------------------------------------------------------------------
// Candidate assembly

// Concatenate the sup/conf/count cognitive lists (minus any ablated kinds),
// deduplicated by item id keeping the first (best-ranked) occurrence.
inline std::vector<const EvidenceItem*> assemble_candidates(
    const RetrievalResult& r, bool drop_confuse = false, bool drop_counter = false) {
  std::vector<const EvidenceItem*> out;
  std::vector<std::int64_t> seen;
  for (int q = 0; q < 3; ++q) {
    if (drop_confuse && q == int(QueryKind::Confusing)) continue;
    if (drop_counter && q == int(QueryKind::Countering)) continue;
    for (const ScoredItem& s : r.cognitive[q]) {
      if (std::find(seen.begin(), seen.end(), s.item->id) != seen.end()) continue;
      seen.push_back(s.item->id);
      out.push_back(s.item);
    }
  }
  return out;
}

// Filter-bypass decisions: keep the top-ceil(K_evidence/3) of each cognitive
// list, where K_evidence is the nominal 3*k_cog candidate budget.
inline std::vector<std::uint8_t> bypass_decisions(
    const RetrievalResult& r, const std::vector<const EvidenceItem*>& candidates,
    int k_cog, bool drop_confuse = false, bool drop_counter = false) {
  int top_per_list = (3 * k_cog + 2) / 3;
  std::vector<std::int64_t> keep_ids;
  for (int q = 0; q < 3; ++q) {
    if (drop_confuse && q == int(QueryKind::Confusing)) continue;
    if (drop_counter && q == int(QueryKind::Countering)) continue;
    int n = std::min<int>(top_per_list, int(r.cognitive[q].size()));
    for (int i = 0; i < n; ++i) keep_ids.push_back(r.cognitive[q][i].item->id);
  }
  std::vector<std::uint8_t> keep;
  for (const EvidenceItem* e : candidates)
    keep.push_back(std::find(keep_ids.begin(), keep_ids.end(), e->id) != keep_ids.end()
                       ? 1
                       : 0);
  return keep;
}

// ---------------------------------------------------------------------------
// SFT teacher policies (heuristics encoding the role semantics)

// Supportive query: the sample's own text vector. Confusing query: text
// centroid of the gold label's confusion partner (nearest other text centroid
// when unpaired). Countering query: centroid of a deterministic "random"
// other label derived from the sample id.
inline QuerySet teacher_queries(const EvidenceIndex& index, const SynthSpec& synth,
                                const ModalSample& sample, const Vec& x_t_eff) {
  QuerySet q;
  q.q_sup = x_t_eff;
  int partner = -1;
  for (auto [a, b] : synth.confusion_pairs) {
    if (a == sample.label) partner = b;
    if (b == sample.label) partner = a;
  }
  if (partner < 0) {
    double best = std::numeric_limits<double>::infinity();
    const Vec& own = index.label_centroid(Modality::Text, sample.label);
    for (int c = 0; c < synth.num_labels; ++c) {
      if (c == sample.label) continue;
      const Vec& cen = index.label_centroid(Modality::Text, c);
      Vec diff(cen.size());
      for (std::size_t i = 0; i < cen.size(); ++i) diff[i] = cen[i] - own[i];
      double dist = l2_norm(diff);
      if (dist < best) {
        best = dist;
        partner = c;
      }
    }
  }
  q.q_conf = index.label_centroid(Modality::Text, partner);
  Rng pick(0x5EEDBA5Eull ^ std::uint64_t(sample.id));
  int other = int(pick.integer(std::uint64_t(synth.num_labels - 1)));
  if (other >= sample.label) ++other;
  q.q_count = index.label_centroid(Modality::Text, other);
  return q;
}

// Top-2 label votes among the perceptual hits (count desc, label asc).
inline std::array<int, 2> perceptual_top2(const RetrievalResult& r, int C) {
  std::vector<int> votes(C, 0);
  for (int m = 0; m < 3; ++m)
    for (const ScoredItem& s : r.perceptual[m]) votes[s.item->label]++;
  auto best = [&](int exclude) {
    int arg = -1, cnt = -1;
    for (int c = 0; c < C; ++c) {
      if (c == exclude) continue;
      if (votes[c] > cnt) {
        cnt = votes[c];
        arg = c;
      }
    }
    return arg;
  };
  int first = best(-1);
  return {first, best(first)};
}

// Keep candidates whose label matches one of the top-2 perceptual votes.
inline std::vector<std::uint8_t> teacher_filter(
    const std::vector<const EvidenceItem*>& candidates, const std::array<int, 2>& top2) {
  std::vector<std::uint8_t> keep;
  for (const EvidenceItem* e : candidates)
    keep.push_back(e->label == top2[0] || e->label == top2[1] ? 1 : 0);
  return keep;
}

// Majority label among kept evidence (ties: smallest label); falls back to
// the top perceptual vote when nothing was kept.
inline int teacher_label(const std::vector<const EvidenceItem*>& kept, int C,
                         int fallback) {
  if (kept.empty()) return fallback;
  std::vector<int> counts(C, 0);
  for (const EvidenceItem* e : kept) counts[e->label]++;
  return int(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace affect
