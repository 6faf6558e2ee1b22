#pragma once

// Exact in-memory cosine nearest-neighbor index over the evidence corpus.
// Serves the dual retrieval pathway: cognitive retrieval from planner query
// vectors (text space) and perceptual retrieval from the raw input, with a
// cross-modal proxy query for missing modalities.

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "affect/envsynth.hpp"
#include "affect/numerics.hpp"

namespace affect {

struct ScoredItem {
  const EvidenceItem* item = nullptr;
  double similarity = 0.0;
};

enum class QueryKind : int { Supportive = 0, Confusing = 1, Countering = 2 };

struct QuerySet {
  Vec q_sup, q_conf, q_count;

  const Vec& get(QueryKind k) const {
    switch (k) {
      case QueryKind::Supportive: return q_sup;
      case QueryKind::Confusing: return q_conf;
      default: return q_count;
    }
  }
};

struct RetrievalResult {
  // Indexed by QueryKind; knn over the cognitive (text) space.
  std::array<std::vector<ScoredItem>, 3> cognitive;
  // Indexed by Modality; knn per modality from the sample's own vectors.
  std::array<std::vector<ScoredItem>, 3> perceptual;
};

class EvidenceIndex {
 public:
  explicit EvidenceIndex(std::vector<EvidenceItem> corpus) : items_(std::move(corpus)) {
    require(!items_.empty(), "build_index: empty corpus");
    for (int m = 0; m < 3; ++m) tables_[m].reserve(items_.size());
    for (const EvidenceItem& e : items_) {
      for (int m = 0; m < 3; ++m) {
        Vec row = e.modality(Modality(m));
        double n = l2_norm(row);
        require(n > 0.0, "build_index: zero-norm embedding for item id " +
                             std::to_string(e.id));
        for (double& x : row) x /= n;
        tables_[m].push_back(std::move(row));
      }
    }
    // Eager label centroids keep the index immutable after build, so
    // concurrent read-only queries stay safe.
    for (int m = 0; m < 3; ++m) {
      std::map<int, std::pair<Vec, int>> acc;
      for (const EvidenceItem& e : items_) {
        auto& [sum, cnt] = acc[e.label];
        const Vec& v = e.modality(Modality(m));
        if (sum.empty()) sum.assign(v.size(), 0.0);
        for (std::size_t i = 0; i < v.size(); ++i) sum[i] += v[i];
        ++cnt;
      }
      for (auto& [lab, sc] : acc) {
        for (double& x : sc.first) x /= double(sc.second);
        centroids_[m][lab] = std::move(sc.first);
      }
    }
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<EvidenceItem>& items() const { return items_; }
  const Vec& normalized(Modality m, std::size_t i) const { return tables_[int(m)][i]; }

  // Exactly min(k, corpus size) results, descending cosine similarity, ties
  // broken by ascending item id.
  std::vector<ScoredItem> knn(const Vec& query, Modality m, int k) const {
    require(k >= 1, "knn: k must be >= 1");
    require(query.size() == tables_[int(m)][0].size(), "knn: query dim mismatch");
    Vec q = query;
    double n = l2_norm(q);
    if (n > 0.0)
      for (double& x : q) x /= n;
    std::vector<ScoredItem> scored(items_.size());
    for (std::size_t i = 0; i < items_.size(); ++i)
      scored[i] = {&items_[i], dot(q, tables_[int(m)][i])};
    auto cmp = [](const ScoredItem& a, const ScoredItem& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      return a.item->id < b.item->id;
    };
    std::size_t kk = std::min<std::size_t>(std::size_t(k), scored.size());
    std::partial_sort(scored.begin(), scored.begin() + kk, scored.end(), cmp);
    scored.resize(kk);
    return scored;
  }

  // Per-label mean of the raw corpus embeddings in one modality.
  const Vec& label_centroid(Modality m, int label) const {
    auto it = centroids_[int(m)].find(label);
    require(it != centroids_[int(m)].end(),
            "label_centroid: label " + std::to_string(label) + " not in corpus");
    return it->second;
  }

  std::vector<int> labels() const {
    std::vector<int> out;
    for (const auto& [lab, v] : centroids_[0]) out.push_back(lab);
    return out;
  }

 private:
  std::vector<EvidenceItem> items_;
  std::array<std::vector<Vec>, 3> tables_;  // L2-normalized, per modality
  std::array<std::map<int, Vec>, 3> centroids_;
};

inline EvidenceIndex build_index(std::vector<EvidenceItem> corpus) {
  return EvidenceIndex(std::move(corpus));
}

// Proxy query for a missing modality: average of the corpus embeddings (in
// the missing modality's table) of the top-1 perceptual hits found through
// the sample's present modalities.
inline Vec missing_modality_proxy(const EvidenceIndex& index, const ModalSample& sample,
                                  Modality missing) {
  Vec proxy;
  int used = 0;
  for (int m = 0; m < 3; ++m) {
    if (m == int(missing) || !sample.present[m]) continue;
    auto top = index.knn(sample.modality(Modality(m)), Modality(m), 1);
    const Vec& e = top[0].item->modality(missing);
    if (proxy.empty()) proxy.assign(e.size(), 0.0);
    for (std::size_t i = 0; i < e.size(); ++i) proxy[i] += e[i];
    ++used;
  }
  require(used > 0, "missing_modality_proxy: no present modality to query with");
  for (double& x : proxy) x /= double(used);
  return proxy;
}

// Perceptual half of the dual pathway: knn per modality from the sample's own
// vectors, with missing modalities retrieved via the proxy query.
inline std::array<std::vector<ScoredItem>, 3> retrieve_perceptual(
    const EvidenceIndex& index, const ModalSample& sample, int k_perc) {
  require(k_perc >= 1, "retrieve_perceptual: k must be >= 1");
  std::array<std::vector<ScoredItem>, 3> out;
  for (int m = 0; m < 3; ++m) {
    Vec query = sample.present[m] ? sample.modality(Modality(m))
                                  : missing_modality_proxy(index, sample, Modality(m));
    out[m] = index.knn(query, Modality(m), k_perc);
  }
  return out;
}

// Cognitive lists from the three planner queries (text space) plus perceptual
// lists per modality.
inline RetrievalResult retrieve_dual(const EvidenceIndex& index, const ModalSample& sample,
                                     const QuerySet& queries, int k_cog, int k_perc) {
  require(k_cog >= 1 && k_perc >= 1, "retrieve_dual: k must be >= 1");
  for (int q = 0; q < 3; ++q)
    require(all_finite(queries.get(QueryKind(q))), "retrieve_dual: non-finite query");
  RetrievalResult out;
  for (int q = 0; q < 3; ++q)
    out.cognitive[q] = index.knn(queries.get(QueryKind(q)), Modality::Text, k_cog);
  out.perceptual = retrieve_perceptual(index, sample, k_perc);
  return out;
}

}  // namespace affect
