#pragma once

// RAAF (residual gated cross-attention over retrieved perceptual evidence)
// and the Modality-Balancing Mixture of Experts with routing weights shared
// across video and audio. Both are trainable and live on the gradient tape.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <vector>

#include "affect/envsynth.hpp"
#include "affect/numerics.hpp"
#include "affect/retrieval.hpp"

namespace affect {

struct RaafParams {
  // Gate matrix per enhanced modality: d x 2d, mapping concat(x_m, h_m) to
  // gate logits. Attention itself is parameter-free scaled dot-product.
  Param gate_v;
  Param gate_a;

  RaafParams() = default;
  RaafParams(std::size_t d, Rng& rng)
      : gate_v("raaf.gate_v", d, 2 * d), gate_a("raaf.gate_a", d, 2 * d) {
    init_xavier(gate_v, rng);
    init_xavier(gate_a, rng);
  }

  Param& gate(Modality m) {
    require(m != Modality::Text, "RaafParams: text is not fused");
    return m == Modality::Video ? gate_v : gate_a;
  }

  std::vector<Param*> params() { return {&gate_v, &gate_a}; }
};

struct MoeParams {
  MLPParams router;                 // 2d -> num_experts logits
  std::vector<MLPParams> experts;   // each d -> hidden -> d
  int top_k = 2;

  MoeParams() = default;
  MoeParams(std::size_t d, int num_experts, int k, std::size_t expert_hidden, Rng& rng)
      : top_k(k) {
    require(k >= 1 && k <= num_experts, "MoeParams: top_k out of range");
    router = make_mlp("moe.router", {2 * d, std::size_t(num_experts)}, rng);
    for (int j = 0; j < num_experts; ++j) {
      experts.push_back(
          make_mlp("moe.expert" + std::to_string(j), {d, expert_hidden, d}, rng));
      // Small output weights so untrained experts perturb the fused features
      // only mildly; training scales them up as needed.
      for (double& w : experts.back().weights.back().value) w *= 0.1;
    }
  }

  int num_experts() const { return int(experts.size()); }

  std::vector<Param*> params() {
    std::vector<Param*> out = router.params();
    for (auto& e : experts)
      for (Param* p : e.params()) out.push_back(p);
    return out;
  }
};

struct FusedState {
  Tape::Id fused_v = -1, fused_a = -1;        // tape nodes for x~_v, x~_a
  Vec routing_weights;                        // alpha over selected experts
  std::vector<int> selected_experts;          // ordered expert ids
  double routing_entropy = 0.0;               // entropy of the full router softmax
  bool no_evidence_v = false, no_evidence_a = false;
};

// h_m = Attn(x_m, E_perc_m, E_perc_m); x_hat = x_m + sigmoid(W_m [x_m; h_m]) * h_m.
// Empty evidence returns x_m unchanged and sets *no_evidence.
inline Tape::Id raaf_fuse(Tape& tape, RaafParams& params, Modality m, Tape::Id x_m,
                          const std::vector<Vec>& evidence, bool* no_evidence = nullptr) {
  if (evidence.empty()) {
    if (no_evidence) *no_evidence = true;
    return x_m;
  }
  if (no_evidence) *no_evidence = false;
  std::vector<Tape::Id> kv;
  kv.reserve(evidence.size());
  for (const Vec& e : evidence) kv.push_back(tape.constant(e));
  Tape::Id h = attention(tape, x_m, kv, kv);
  Param& W = params.gate(m);
  Tape::Id logits = tape.matvec(tape.leaf(W), W.rows, W.cols, tape.concat(x_m, h));
  return tape.add(x_m, tape.mul(tape.sigmoid(logits), h));
}

// True top-k of `scores` by descending value, ties by ascending index.
inline std::vector<std::size_t> top_k_indices(const Vec& scores, int k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto cmp = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), cmp);
  idx.resize(k);
  return idx;
}

// Shared routing: g = concat(x_hat_v, x_hat_a); router scores -> hard top-K
// selection -> softmax over the selected logits only -> alpha; both
// modalities are transformed by the same experts with the same alpha.
// Straight-through: the forward uses hard selection, the backward flows
// through the softmax over selected logits (selection is non-differentiable).
inline FusedState mbmoe_fuse(Tape& tape, MoeParams& params, Tape::Id x_hat_v,
                             Tape::Id x_hat_a) {
  Tape::Id g = tape.concat(x_hat_v, x_hat_a);
  Tape::Id logits = mlp_forward(tape, params.router, g);
  Vec scores = tape.value(logits);  // copy: later pushes may reallocate nodes
  std::vector<std::size_t> sel = top_k_indices(scores, params.top_k);
  Tape::Id alpha = tape.softmax(tape.gather(logits, sel));

  FusedState fs;
  fs.routing_weights = tape.value(alpha);
  for (std::size_t j : sel) fs.selected_experts.push_back(int(j));

  for (int pass = 0; pass < 2; ++pass) {
    Tape::Id x = pass == 0 ? x_hat_v : x_hat_a;
    std::vector<Tape::Id> outs;
    for (std::size_t j : sel) outs.push_back(mlp_forward(tape, params.experts[j], x));
    Tape::Id fused = tape.weighted_sum(alpha, outs);
    (pass == 0 ? fs.fused_v : fs.fused_a) = fused;
  }

  Vec full = softmax(scores);
  double ent = 0.0;
  for (double p : full)
    if (p > 0.0) ent -= p * std::log(p);
  fs.routing_entropy = ent;
  return fs;
}

// Full fusion path for one sample: missing video/audio slots are substituted
// with the top-1 perceptual evidence vector before RAAF, then MB-MoE.
inline FusedState fuse_pipeline(Tape& tape, RaafParams& raaf, MoeParams& moe,
                                const ModalSample& sample,
                                const std::array<std::vector<Vec>, 3>& perc_vectors) {
  std::array<Tape::Id, 3> x_in{-1, -1, -1};
  bool any_input = false;
  for (Modality m : {Modality::Video, Modality::Audio}) {
    const auto& ev = perc_vectors[int(m)];
    if (sample.has(m)) {
      x_in[int(m)] = tape.constant(sample.modality(m));
      any_input = true;
    } else if (!ev.empty()) {
      x_in[int(m)] = tape.constant(ev.front());  // top-1 substitution
      any_input = true;
    } else {
      x_in[int(m)] = tape.constant(Vec(sample.x_t.size(), 0.0));
    }
  }
  require(any_input,
          "fuse_pipeline: video and audio missing with no perceptual evidence");

  FusedState fs;
  bool nev = false, nea = false;
  Tape::Id xv = raaf_fuse(tape, raaf, Modality::Video, x_in[int(Modality::Video)],
                          perc_vectors[int(Modality::Video)], &nev);
  Tape::Id xa = raaf_fuse(tape, raaf, Modality::Audio, x_in[int(Modality::Audio)],
                          perc_vectors[int(Modality::Audio)], &nea);
  fs = mbmoe_fuse(tape, moe, xv, xa);
  fs.no_evidence_v = nev;
  fs.no_evidence_a = nea;
  return fs;
}

// Evidence vectors for RAAF from a retrieval result (per-modality embeddings
// of the perceptual hits).
inline std::array<std::vector<Vec>, 3> perceptual_vectors(const RetrievalResult& r) {
  std::array<std::vector<Vec>, 3> out;
  for (int m = 0; m < 3; ++m)
    for (const ScoredItem& s : r.perceptual[m])
      out[m].push_back(s.item->modality(Modality(m)));
  return out;
}

}  // namespace affect
