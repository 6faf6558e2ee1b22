#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "affect/retrieval.hpp"

using namespace affect;

namespace {

std::vector<EvidenceItem> random_corpus(std::size_t n, std::size_t d, Rng& rng,
                                        int num_labels = 4) {
  std::vector<EvidenceItem> corpus;
  for (std::size_t i = 0; i < n; ++i) {
    EvidenceItem e;
    e.id = std::int64_t(i);
    e.label = int(rng.integer(num_labels));
    for (auto* v : {&e.e_t, &e.e_v, &e.e_a}) {
      v->resize(d);
      for (double& x : *v) x = rng.normal();
    }
    corpus.push_back(std::move(e));
  }
  return corpus;
}

// Brute force: full sort of all cosines, descending, ties by ascending id.
std::vector<ScoredItem> brute_knn(const std::vector<EvidenceItem>& corpus,
                                  const Vec& query, Modality m, int k) {
  Vec q = query;
  double n = l2_norm(q);
  if (n > 0.0)
    for (double& x : q) x /= n;
  std::vector<ScoredItem> all;
  for (const EvidenceItem& e : corpus) {
    Vec row = e.modality(m);
    double rn = l2_norm(row);
    for (double& x : row) x /= rn;
    all.push_back({&e, dot(q, row)});
  }
  std::sort(all.begin(), all.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.item->id < b.item->id;
  });
  all.resize(std::min<std::size_t>(std::size_t(k), all.size()));
  return all;
}

}  // namespace

TEST_CASE("build_index") {
  Rng rng(1);

  SECTION("single-item corpus") {
    EvidenceIndex index = build_index(random_corpus(1, 4, rng));
    REQUIRE(index.size() == 1);
  }

  SECTION("duplicate embeddings are both retrievable") {
    auto corpus = random_corpus(2, 4, rng);
    corpus[1].e_t = corpus[0].e_t;
    corpus[1].e_v = corpus[0].e_v;
    corpus[1].e_a = corpus[0].e_a;
    EvidenceIndex index = build_index(corpus);
    auto hits = index.knn(corpus[0].e_t, Modality::Text, 2);
    REQUIRE(hits.size() == 2);
    REQUIRE(hits[0].item->id == 0);  // tie broken by ascending id
    REQUIRE(hits[1].item->id == 1);
  }

  SECTION("stored rows are unit norm") {
    EvidenceIndex index = build_index(random_corpus(100, 8, rng));
    for (int m = 0; m < 3; ++m)
      for (std::size_t i = 0; i < index.size(); ++i)
        REQUIRE(l2_norm(index.normalized(Modality(m), i)) ==
                Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("zero-norm embedding is rejected with the item id") {
    auto corpus = random_corpus(3, 4, rng);
    corpus[2].e_v.assign(4, 0.0);
    try {
      build_index(corpus);
      FAIL("expected an error");
    } catch (const std::exception& e) {
      REQUIRE(std::string(e.what()).find("2") != std::string::npos);
    }
  }

  SECTION("empty corpus is rejected") { REQUIRE_THROWS(build_index({})); }
}

TEST_CASE("knn") {
  Rng rng(2);

  SECTION("self-retrieval with similarity 1") {
    auto corpus = random_corpus(20, 6, rng);
    EvidenceIndex index = build_index(corpus);
    auto hits = index.knn(corpus[7].e_a, Modality::Audio, 1);
    REQUIRE(hits.size() == 1);
    REQUIRE(hits[0].item->id == 7);
    REQUIRE(hits[0].similarity == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("k beyond corpus size returns the whole corpus sorted") {
    auto corpus = random_corpus(5, 4, rng);
    EvidenceIndex index = build_index(corpus);
    auto hits = index.knn(Vec{1, 0, 0, 0}, Modality::Text, 50);
    REQUIRE(hits.size() == 5);
    for (std::size_t i = 1; i < hits.size(); ++i)
      REQUIRE(hits[i - 1].similarity >= hits[i].similarity);
  }

  SECTION("matches brute-force ranking on 200 random instances") {
    for (int trial = 0; trial < 200; ++trial) {
      std::size_t n = 1 + rng.integer(500);
      std::size_t d = 2 + rng.integer(8);
      auto corpus = random_corpus(n, d, rng);
      EvidenceIndex index = build_index(corpus);
      Vec q(d);
      for (double& x : q) x = rng.normal();
      int k = 1 + int(rng.integer(10));
      auto got = index.knn(q, Modality::Video, k);
      auto want = brute_knn(corpus, q, Modality::Video, k);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        REQUIRE(got[i].item->id == want[i].item->id);
        REQUIRE(got[i].similarity == want[i].similarity);
      }
    }
  }

  SECTION("dim mismatch is an error") {
    EvidenceIndex index = build_index(random_corpus(3, 4, rng));
    REQUIRE_THROWS(index.knn(Vec{1, 2}, Modality::Text, 1));
  }
}

TEST_CASE("retrieve_dual") {
  Rng rng(3);
  SynthSpec spec;
  spec.num_labels = 4;
  spec.dim = 8;
  spec.train_per_label = 4;
  spec.test_per_label = 2;
  spec.corpus_per_label = 12;
  spec.confusion_pairs = {{0, 1}, {2, 3}};
  spec.seed = 5;

  SECTION("zero-noise self query hits the matching cluster at similarity 1") {
    SynthSpec zs = spec;
    zs.noise = {0.0, 0.0, 0.0};
    Dataset d = generate_dataset(zs);
    EvidenceIndex index = build_index(d.corpus);
    const ModalSample& s = d.train[0];
    QuerySet q{s.x_t, s.x_t, s.x_t};
    RetrievalResult r = retrieve_dual(index, s, q, 3, 2);
    REQUIRE(r.cognitive[0][0].similarity == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(r.cognitive[0][0].item->label == s.label);
  }

  SECTION("missing audio still yields a full-length perceptual audio list") {
    Dataset d = generate_dataset(spec);
    EvidenceIndex index = build_index(d.corpus);
    ModalSample s = apply_missing(d.train[1], Modality::Audio);
    QuerySet q{s.x_t, s.x_t, s.x_t};
    RetrievalResult r = retrieve_dual(index, s, q, 3, 4);
    REQUIRE(r.perceptual[int(Modality::Audio)].size() == 4);
  }

  SECTION("identical queries produce identical cognitive lists") {
    Dataset d = generate_dataset(spec);
    EvidenceIndex index = build_index(d.corpus);
    const ModalSample& s = d.train[2];
    QuerySet q{s.x_t, s.x_t, s.x_t};
    RetrievalResult r = retrieve_dual(index, s, q, 5, 2);
    for (int kind = 1; kind < 3; ++kind) {
      REQUIRE(r.cognitive[kind].size() == r.cognitive[0].size());
      for (std::size_t i = 0; i < r.cognitive[0].size(); ++i) {
        REQUIRE(r.cognitive[kind][i].item->id == r.cognitive[0][i].item->id);
        REQUIRE(r.cognitive[kind][i].similarity == r.cognitive[0][i].similarity);
      }
    }
  }

  SECTION("deterministic given the same inputs") {
    Dataset d = generate_dataset(spec);
    EvidenceIndex index = build_index(d.corpus);
    const ModalSample& s = d.test[0];
    QuerySet q{s.x_t, s.x_v, s.x_a};
    RetrievalResult a = retrieve_dual(index, s, q, 4, 3);
    RetrievalResult b = retrieve_dual(index, s, q, 4, 3);
    for (int kind = 0; kind < 3; ++kind)
      for (std::size_t i = 0; i < a.cognitive[kind].size(); ++i)
        REQUIRE(a.cognitive[kind][i].item->id == b.cognitive[kind][i].item->id);
  }
}

TEST_CASE("missing_modality_proxy averages top-1 cross-modal hits") {
  Rng rng(4);
  auto corpus = random_corpus(30, 5, rng);
  EvidenceIndex index = build_index(corpus);
  ModalSample s;
  s.id = 0;
  s.label = 0;
  s.x_t = corpus[3].e_t;
  s.x_v = corpus[9].e_v;
  s.x_a = Vec(5, 0.0);
  s.present = {true, true, false};
  Vec proxy = missing_modality_proxy(index, s, Modality::Audio);
  // Top-1 text hit is item 3, top-1 video hit is item 9; proxy is the mean of
  // their audio embeddings.
  for (std::size_t i = 0; i < 5; ++i)
    REQUIRE(proxy[i] ==
            Catch::Approx(0.5 * (corpus[3].e_a[i] + corpus[9].e_a[i])).margin(1e-12));
}
