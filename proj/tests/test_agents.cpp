#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "affect/pipeline.hpp"

using namespace affect;

namespace {

Vec random_vec(std::size_t d, Rng& rng) {
  Vec v(d);
  for (double& x : v) x = rng.normal();
  return v;
}

void zero_head(MLPParams& head) {
  for (Param& w : head.weights) std::fill(w.value.begin(), w.value.end(), 0.0);
  for (Param& b : head.biases) std::fill(b.value.begin(), b.value.end(), 0.0);
}

ModalSample random_sample(std::size_t d, int label, Rng& rng) {
  ModalSample s;
  s.id = 0;
  s.label = label;
  s.x_t = random_vec(d, rng);
  s.x_v = random_vec(d, rng);
  s.x_a = random_vec(d, rng);
  s.present = {true, true, true};
  return s;
}

}  // namespace

TEST_CASE("observation encodings") {
  NetDims dims;  // defaults d=16, C=6

  SECTION("dimensions") {
    REQUIRE(dims.planner_obs_dim() == 54);    // 3*16 + 6
    REQUIRE(dims.filter_item_dim() == 39);    // 2*16 + 1 + 6
    REQUIRE(dims.generator_obs_dim() == 70);  // 16 + 16 + 6 + 2*16
    REQUIRE(dims.obs_dim() == 70);
    REQUIRE(dims.trunk_input_dim() == 73);
  }

  SECTION("planner observation concatenates the three modalities") {
    Rng rng(1);
    ModalSample s = random_sample(16, 2, rng);
    Observation o = build_planner_obs(s, s.x_t, dims.C);
    REQUIRE(int(o.features.size()) == dims.planner_obs_dim());
    REQUIRE(Vec(o.features.begin(), o.features.begin() + 16) == s.x_t);
    REQUIRE(Vec(o.features.begin() + 16, o.features.begin() + 32) == s.x_v);
    REQUIRE(Vec(o.features.begin() + 32, o.features.begin() + 48) == s.x_a);
  }

  SECTION("filter observation has one row per candidate with cosine and label") {
    Rng rng(2);
    Vec x_t = random_vec(8, rng);
    std::vector<EvidenceItem> items(3);
    for (int i = 0; i < 3; ++i) {
      items[i].id = i;
      items[i].label = i;
      items[i].e_t = random_vec(8, rng);
      items[i].e_v = random_vec(8, rng);
      items[i].e_a = random_vec(8, rng);
    }
    std::vector<const EvidenceItem*> cand = {&items[0], &items[1], &items[2]};
    Observation o = build_filter_obs(x_t, cand, 4);
    REQUIRE(o.item_features.size() == 3);
    for (int i = 0; i < 3; ++i) {
      const Vec& f = o.item_features[std::size_t(i)];
      REQUIRE(f.size() == std::size_t(2 * 8 + 1 + 4));
      REQUIRE(f[16] == Catch::Approx(cosine(x_t, items[std::size_t(i)].e_t)));
      REQUIRE(f[17 + std::size_t(i)] == 1.0);  // one-hot label
    }
  }

  SECTION("empty kept set zeroes the evidence mean and histogram") {
    Rng rng(3);
    Vec x_t = random_vec(6, rng);
    Vec prefix = generator_prefix(x_t, {}, 4);
    REQUIRE(prefix.size() == std::size_t(6 + 6 + 4));
    for (std::size_t i = 6; i < prefix.size(); ++i) REQUIRE(prefix[i] == 0.0);
  }
}

TEST_CASE("action log-probabilities") {
  NetDims dims{6, 4, 16};
  Rng rng(4);
  PolicyBundle b = make_policy(dims, 0.3, rng);

  SECTION("zero filter logits give keep-probability one half per item") {
    zero_head(b.actor.filter_head);
    Observation o;
    o.role = Role::Filter;
    for (int i = 0; i < 8; ++i) o.item_features.push_back(random_vec(19, rng));
    Rng srng(5);
    ActResult r = act(b, o, /*greedy=*/false, srng);
    REQUIRE(r.action.keep.size() == 8);
    REQUIRE(r.logprob == Catch::Approx(8.0 * std::log(0.5)).margin(1e-12));
  }

  SECTION("zero generator logits give a uniform categorical") {
    zero_head(b.actor.generator_head);
    Observation o;
    o.role = Role::Generator;
    o.features = random_vec(std::size_t(dims.generator_obs_dim()), rng);
    Rng srng(6);
    ActResult r = act(b, o, false, srng);
    REQUIRE(r.logprob == Catch::Approx(std::log(0.25)).margin(1e-12));
  }

  SECTION("greedy planner action sits at the Gaussian mean, closed form") {
    Observation o = build_planner_obs(random_sample(6, 0, rng),
                                      random_vec(6, rng), dims.C);
    Rng srng(7);
    ActResult r = act(b, o, /*greedy=*/true, srng);
    double sigma = 0.3;
    double expect = -3.0 * dims.d * (std::log(sigma) + 0.5 * std::log(2.0 * M_PI));
    REQUIRE(r.logprob == Catch::Approx(expect).margin(1e-9));
  }

  SECTION("logprob_of reproduces the sampling logprob bit-exactly") {
    for (int role = 0; role < 3; ++role) {
      Observation o;
      o.role = Role(role);
      if (o.role == Role::Planner)
        o.features = random_vec(std::size_t(dims.planner_obs_dim()), rng);
      else if (o.role == Role::Generator)
        o.features = random_vec(std::size_t(dims.generator_obs_dim()), rng);
      else
        for (int i = 0; i < 5; ++i)
          o.item_features.push_back(random_vec(std::size_t(dims.filter_item_dim()), rng));
      Rng srng(std::uint64_t(100 + role));
      ActResult r = act(b, o, false, srng);
      REQUIRE(logprob_of(b, o, r.action) == r.logprob);
    }
  }

  SECTION("greedy actions are deterministic across rng states") {
    Observation o;
    o.role = Role::Generator;
    o.features = random_vec(std::size_t(dims.generator_obs_dim()), rng);
    Rng r1(1), r2(999);
    ActResult a = act(b, o, true, r1);
    ActResult c = act(b, o, true, r2);
    REQUIRE(a.action.label == c.action.label);
    REQUIRE(a.logprob == c.logprob);
  }

  SECTION("sampled generator labels follow the softmax distribution") {
    Observation o;
    o.role = Role::Generator;
    o.features = random_vec(std::size_t(dims.generator_obs_dim()), rng);
    Tape tape;
    Vec probs = tape.value(tape.softmax(generator_logits_node(
        tape, dims, b.actor, tape.constant(o.features))));
    const int N = 100000;
    std::vector<int> counts(std::size_t(dims.C), 0);
    Rng srng(8);
    for (int i = 0; i < N; ++i) counts[std::size_t(act(b, o, false, srng).action.label)]++;
    for (int c = 0; c < dims.C; ++c) {
      double freq = double(counts[std::size_t(c)]) / N;
      double se = std::sqrt(probs[std::size_t(c)] * (1 - probs[std::size_t(c)]) / N);
      REQUIRE(std::abs(freq - probs[std::size_t(c)]) <= 5.0 * se + 1e-4);
    }
  }
}

TEST_CASE("trunk is shared across roles") {
  NetDims dims{4, 3, 8};
  Rng rng(9);
  PolicyBundle b = make_policy(dims, 0.3, rng);

  Observation po;
  po.role = Role::Planner;
  po.features = random_vec(std::size_t(dims.planner_obs_dim()), rng);
  Observation go;
  go.role = Role::Generator;
  go.features = random_vec(std::size_t(dims.generator_obs_dim()), rng);

  Rng srng(10);
  Vec p0 = act(b, po, true, srng).action.queries[0];
  int g0 = act(b, go, true, srng).action.label;
  double glp0 = logprob_of(b, go, AgentAction{Role::Generator, {}, {}, g0});

  // Perturb only the trunk: every role's outputs must move.
  for (double& w : b.actor.trunk.weights[0].value) w += 0.5;
  Vec p2 = act(b, po, true, srng).action.queries[0];
  double glp1 = logprob_of(b, go, AgentAction{Role::Generator, {}, {}, g0});
  REQUIRE(p2 != p0);
  REQUIRE(glp1 != glp0);
}

TEST_CASE("candidate assembly and bypass") {
  Rng rng(11);
  std::vector<EvidenceItem> items(9);
  for (int i = 0; i < 9; ++i) {
    items[std::size_t(i)].id = i;
    items[std::size_t(i)].label = i % 3;
  }
  RetrievalResult r;
  // sup: 0,1,2  conf: 2,3,4  count: 4,5,6 (overlaps dedup to first occurrence)
  for (int q = 0; q < 3; ++q)
    for (int i = 0; i < 3; ++i)
      r.cognitive[q].push_back({&items[std::size_t(2 * q + i)], 1.0 - 0.1 * i});

  SECTION("deduplicates by id keeping rank order") {
    auto cand = assemble_candidates(r);
    std::vector<std::int64_t> ids;
    for (auto* e : cand) ids.push_back(e->id);
    REQUIRE(ids == std::vector<std::int64_t>{0, 1, 2, 3, 4, 5, 6});
  }

  SECTION("dropping lists removes their exclusive items") {
    auto cand = assemble_candidates(r, /*drop_confuse=*/true, /*drop_counter=*/true);
    REQUIRE(cand.size() == 3);
    auto cand2 = assemble_candidates(r, false, /*drop_counter=*/true);
    REQUIRE(cand2.size() == 5);
  }

  SECTION("bypass keeps the top slice of each list and matches candidate order") {
    auto cand = assemble_candidates(r);
    auto keep = bypass_decisions(r, cand, /*k_cog=*/2);  // ceil(6/3)=2 per list
    REQUIRE(keep.size() == cand.size());
    // Kept ids: sup {0,1}, conf {2,3}, count {4,5}.
    std::vector<std::uint8_t> want = {1, 1, 1, 1, 1, 1, 0};
    REQUIRE(keep == want);
  }
}

TEST_CASE("teacher policies") {
  SynthSpec spec;
  spec.num_labels = 4;
  spec.dim = 8;
  spec.train_per_label = 6;
  spec.test_per_label = 2;
  spec.corpus_per_label = 10;
  spec.confusion_pairs = {{0, 1}};
  spec.seed = 12;
  Dataset data = generate_dataset(spec);
  EvidenceIndex index = build_index(data.corpus);

  SECTION("supportive query is the text input; confusing query is the partner centroid") {
    const ModalSample& s = data.train[0];
    REQUIRE(s.label == 0);
    QuerySet q = teacher_queries(index, spec, s, s.x_t);
    REQUIRE(q.q_sup == s.x_t);
    REQUIRE(q.q_conf == index.label_centroid(Modality::Text, 1));
    REQUIRE(q.q_count != index.label_centroid(Modality::Text, s.label));
  }

  SECTION("unpaired label uses the nearest other text centroid as confusing") {
    const ModalSample* s = nullptr;
    for (const auto& t : data.train)
      if (t.label == 2) s = &t;
    REQUIRE(s != nullptr);
    QuerySet q = teacher_queries(index, spec, *s, s->x_t);
    bool is_centroid = false;
    for (int c = 0; c < spec.num_labels; ++c)
      if (c != 2 && q.q_conf == index.label_centroid(Modality::Text, c))
        is_centroid = true;
    REQUIRE(is_centroid);
  }

  SECTION("filter teacher keeps exactly the top-2 vote labels") {
    std::vector<EvidenceItem> items(4);
    for (int i = 0; i < 4; ++i) items[std::size_t(i)].label = i;
    std::vector<const EvidenceItem*> cand;
    for (auto& e : items) cand.push_back(&e);
    auto keep = teacher_filter(cand, {1, 3});
    REQUIRE(keep == std::vector<std::uint8_t>{0, 1, 0, 1});
  }

  SECTION("generator teacher takes the majority, ties to the smallest label") {
    std::vector<EvidenceItem> items(5);
    items[0].label = 2;
    items[1].label = 2;
    items[2].label = 1;
    items[3].label = 1;
    items[4].label = 0;
    std::vector<const EvidenceItem*> kept = {&items[0], &items[1], &items[2],
                                             &items[3], &items[4]};
    REQUIRE(teacher_label(kept, 4, 3) == 1);  // tie between 1 and 2 -> 1
    REQUIRE(teacher_label({}, 4, 3) == 3);    // empty -> fallback
    REQUIRE(teacher_label({&items[0]}, 4, 3) == 2);
  }
}

TEST_CASE("sft warm start") {
  RunConfig cfg;
  cfg.synth.num_labels = 4;
  cfg.synth.dim = 8;
  cfg.synth.train_per_label = 5;
  cfg.synth.test_per_label = 2;
  cfg.synth.corpus_per_label = 8;
  cfg.synth.confusion_pairs = {{0, 1}};
  cfg.synth.seed = 13;
  cfg.agents.hidden = 16;
  Dataset data = generate_dataset(cfg.synth);
  EvidenceIndex index = build_index(data.corpus);

  SECTION("zero epochs copies the actor into the frozen reference unchanged") {
    Rng rng(14);
    System sys = make_system(cfg, rng);
    Vec before = flatten(sys.policy.actor_params());
    sft_warm_start(sys, index, cfg, data.train, /*epochs=*/0, rng);
    REQUIRE(flatten(sys.policy.actor_params()) == before);
    REQUIRE(sys.policy.sft.has_value());
    REQUIRE(flatten(sys.policy.sft->params()) == before);
  }

  SECTION("training epochs move the actor; the reference freezes the result") {
    Rng rng(15);
    System sys = make_system(cfg, rng);
    Vec init = flatten(sys.policy.actor_params());
    sft_warm_start(sys, index, cfg, data.train, /*epochs=*/1, rng);
    REQUIRE(flatten(sys.policy.actor_params()) != init);
    REQUIRE(sys.policy.sft.has_value());
    REQUIRE(flatten(sys.policy.sft->params()) == flatten(sys.policy.actor_params()));
  }
}
