#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "affect/fusion.hpp"

using namespace affect;

namespace {

Vec random_vec(std::size_t d, Rng& rng) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

// Force every gate logit to `c` for inputs whose first coordinate is 1:
// only the first column of the gate matrix is nonzero.
void pin_gate(Param& gate, double c) {
  std::fill(gate.value.begin(), gate.value.end(), 0.0);
  for (std::size_t r = 0; r < gate.rows; ++r) gate.value[r * gate.cols] = c;
}

void pin_router(MoeParams& moe, const Vec& logits) {
  Param& w = moe.router.weights[0];
  Param& b = moe.router.biases[0];
  std::fill(w.value.begin(), w.value.end(), 0.0);
  std::copy(logits.begin(), logits.end(), b.value.begin());
}

}  // namespace

TEST_CASE("raaf_fuse gating") {
  Rng rng(1);
  std::size_t d = 6;
  RaafParams raaf(d, rng);

  Vec x = random_vec(d, rng);
  x[0] = 1.0;
  std::vector<Vec> evidence = {random_vec(d, rng), random_vec(d, rng)};

  SECTION("a fully closed gate reproduces the input") {
    pin_gate(raaf.gate_v, -40.0);
    Tape tape;
    Tape::Id out = raaf_fuse(tape, raaf, Modality::Video, tape.constant(x), evidence);
    const Vec& y = tape.value(out);
    for (std::size_t i = 0; i < d; ++i)
      REQUIRE(std::abs(y[i] - x[i]) <= 1e-12);
  }

  SECTION("a fully open gate with one evidence vector adds it to the input") {
    pin_gate(raaf.gate_a, 40.0);
    Vec v = random_vec(d, rng);
    Tape tape;
    Tape::Id out = raaf_fuse(tape, raaf, Modality::Audio, tape.constant(x), {v});
    const Vec& y = tape.value(out);
    // Attention over a single key/value returns that value exactly.
    for (std::size_t i = 0; i < d; ++i)
      REQUIRE(y[i] == Catch::Approx(x[i] + v[i]).margin(1e-12));
  }

  SECTION("empty evidence is identity and raises the flag") {
    Tape tape;
    bool no_ev = false;
    Tape::Id xid = tape.constant(x);
    Tape::Id out = raaf_fuse(tape, raaf, Modality::Video, xid, {}, &no_ev);
    REQUIRE(no_ev);
    REQUIRE(out == xid);
  }

  SECTION("gradient of the gate matches finite differences") {
    auto fn = param_scalar_fn(raaf.params(), [&] {
      Tape tape;
      Tape::Id out =
          raaf_fuse(tape, raaf, Modality::Video, tape.constant(x), evidence);
      Tape::Id loss = tape.sum(tape.mul(out, out));
      tape.backward(loss);
      return tape.value(loss)[0];
    });
    Vec point = flatten(raaf.params());
    REQUIRE(finite_diff_check(fn, point, 1e-5) <= 1e-5);
  }
}

TEST_CASE("top_k_indices") {
  SECTION("matches a full sort with tie-break by index") {
    Rng rng(2);
    for (int trial = 0; trial < 200; ++trial) {
      std::size_t n = 1 + rng.integer(12);
      Vec scores(n);
      // Coarse values make ties common.
      for (double& s : scores) s = double(rng.integer(4));
      int k = 1 + int(rng.integer(n));
      auto got = top_k_indices(scores, k);
      std::vector<std::size_t> want(n);
      std::iota(want.begin(), want.end(), 0);
      std::stable_sort(want.begin(), want.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] > scores[b];
      });
      want.resize(std::size_t(k));
      REQUIRE(got == want);
    }
  }
}

TEST_CASE("mbmoe_fuse") {
  Rng rng(3);
  std::size_t d = 4;
  int E = 4, K = 2;

  SECTION("router logits (5,1,0,0) give alpha (0.982, 0.018) over experts 0 and 1") {
    MoeParams moe(d, E, K, 8, rng);
    pin_router(moe, {5.0, 1.0, 0.0, 0.0});
    Tape tape;
    FusedState fs = mbmoe_fuse(tape, moe, tape.constant(random_vec(d, rng)),
                               tape.constant(random_vec(d, rng)));
    REQUIRE(fs.selected_experts == std::vector<int>{0, 1});
    double z = std::exp(5.0) + std::exp(1.0);
    REQUIRE(fs.routing_weights[0] == Catch::Approx(std::exp(5.0) / z).epsilon(1e-10));
    REQUIRE(fs.routing_weights[1] == Catch::Approx(std::exp(1.0) / z).epsilon(1e-10));
    REQUIRE(fs.routing_weights[0] == Catch::Approx(0.982).margin(5e-4));
  }

  SECTION("alpha is a distribution over exactly K entries and routing is shared") {
    for (int trial = 0; trial < 1000; ++trial) {
      MoeParams moe(d, E, K, 6, rng);
      Tape tape;
      Vec xv = random_vec(d, rng), xa = random_vec(d, rng);
      FusedState fs = mbmoe_fuse(tape, moe, tape.constant(xv), tape.constant(xa));
      REQUIRE(fs.routing_weights.size() == std::size_t(K));
      REQUIRE(int(fs.selected_experts.size()) == K);
      double sum = 0.0;
      for (double a : fs.routing_weights) {
        REQUIRE(a > 0.0);
        sum += a;
      }
      REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
      // Shared routing: re-running with the modalities swapped in the pair
      // order must select via the same router input, so verify instead that
      // both outputs were produced from one selection by recomputing v and a
      // manually with the recorded alpha and experts.
      for (int pass = 0; pass < 2; ++pass) {
        const Vec& x = pass == 0 ? xv : xa;
        const Vec& fused = tape.value(pass == 0 ? fs.fused_v : fs.fused_a);
        Vec manual(d, 0.0);
        for (std::size_t j = 0; j < fs.selected_experts.size(); ++j) {
          Vec out = mlp_forward(moe.experts[std::size_t(fs.selected_experts[j])], x);
          for (std::size_t i = 0; i < d; ++i)
            manual[i] += fs.routing_weights[j] * out[i];
        }
        for (std::size_t i = 0; i < d; ++i)
          REQUIRE(fused[i] == Catch::Approx(manual[i]).margin(1e-12));
      }
    }
  }

  SECTION("identical experts make the output independent of routing") {
    MoeParams moe(d, E, K, 6, rng);
    for (int j = 1; j < E; ++j) {
      for (std::size_t l = 0; l < moe.experts[0].weights.size(); ++l) {
        moe.experts[std::size_t(j)].weights[l].value = moe.experts[0].weights[l].value;
        moe.experts[std::size_t(j)].biases[l].value = moe.experts[0].biases[l].value;
      }
    }
    Vec xv = random_vec(d, rng), xa = random_vec(d, rng);
    Tape tape;
    FusedState fs = mbmoe_fuse(tape, moe, tape.constant(xv), tape.constant(xa));
    Vec expect = mlp_forward(moe.experts[0], xv);
    const Vec& fused = tape.value(fs.fused_v);
    for (std::size_t i = 0; i < d; ++i)
      REQUIRE(fused[i] == Catch::Approx(expect[i]).margin(1e-12));
  }

  SECTION("deterministic for identical inputs") {
    MoeParams moe(d, E, K, 6, rng);
    Vec xv = random_vec(d, rng), xa = random_vec(d, rng);
    Tape t1, t2;
    FusedState a = mbmoe_fuse(t1, moe, t1.constant(xv), t1.constant(xa));
    FusedState b = mbmoe_fuse(t2, moe, t2.constant(xv), t2.constant(xa));
    REQUIRE(a.selected_experts == b.selected_experts);
    REQUIRE(t1.value(a.fused_v) == t2.value(b.fused_v));
    REQUIRE(t1.value(a.fused_a) == t2.value(b.fused_a));
    REQUIRE(a.routing_entropy == b.routing_entropy);
  }

  SECTION("straight-through gradient matches finite differences") {
    MoeParams moe(d, E, K, 6, rng);
    // Well-separated router logits keep the hard selection stable under the
    // finite-difference perturbations.
    pin_router(moe, {6.0, 3.0, -3.0, -6.0});
    Vec xv = random_vec(d, rng), xa = random_vec(d, rng);
    auto fn = param_scalar_fn(moe.params(), [&] {
      Tape tape;
      FusedState fs = mbmoe_fuse(tape, moe, tape.constant(xv), tape.constant(xa));
      Tape::Id loss = tape.sum(tape.mul(tape.add(fs.fused_v, fs.fused_a),
                                        tape.add(fs.fused_v, fs.fused_a)));
      tape.backward(loss);
      return tape.value(loss)[0];
    });
    Vec point = flatten(moe.params());
    REQUIRE(finite_diff_check(fn, point, 1e-5) <= 1e-5);
  }
}

TEST_CASE("fuse_pipeline substitution") {
  Rng rng(4);
  std::size_t d = 5;
  RaafParams raaf(d, rng);
  MoeParams moe(d, 4, 2, 6, rng);

  ModalSample s;
  s.id = 0;
  s.label = 0;
  s.x_t = random_vec(d, rng);
  s.x_v = random_vec(d, rng);
  s.x_a = random_vec(d, rng);
  s.present = {true, true, true};

  std::array<std::vector<Vec>, 3> perc;
  for (int m = 0; m < 3; ++m)
    perc[m] = {random_vec(d, rng), random_vec(d, rng)};

  SECTION("missing audio is replaced by the top-1 perceptual audio vector") {
    ModalSample miss = apply_missing(s, Modality::Audio);
    // Equivalent sample where the substitution is done by hand.
    ModalSample subst = s;
    subst.x_a = perc[int(Modality::Audio)].front();
    Tape t1, t2;
    FusedState a = fuse_pipeline(t1, raaf, moe, miss, perc);
    FusedState b = fuse_pipeline(t2, raaf, moe, subst, perc);
    REQUIRE(t1.value(a.fused_v) == t2.value(b.fused_v));
    REQUIRE(t1.value(a.fused_a) == t2.value(b.fused_a));
  }

  SECTION("missing modality without evidence falls back to zeros, not an error") {
    ModalSample miss = apply_missing(s, Modality::Video);
    std::array<std::vector<Vec>, 3> empty_perc;
    empty_perc[int(Modality::Audio)] = perc[int(Modality::Audio)];
    Tape tape;
    REQUIRE_NOTHROW(fuse_pipeline(tape, raaf, moe, miss, empty_perc));
  }

  SECTION("both fusable modalities absent with no evidence is an error") {
    ModalSample miss = apply_missing(s, Modality::Video);
    miss.present[int(Modality::Audio)] = false;
    std::array<std::vector<Vec>, 3> empty_perc;
    Tape tape;
    REQUIRE_THROWS(fuse_pipeline(tape, raaf, moe, miss, empty_perc));
  }
}
