#pragma once

// Synthetic multimodal emotion environment: labeled samples with text /
// video / audio feature vectors, an external evidence corpus drawn from the
// same generative process, missing-modality masks, and F1 scoring.
//
// Confusion-pair labels share near-identical text centroids but separated
// audio/video centroids, so text-only prediction is deliberately ambiguous.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affect/numerics.hpp"

namespace affect {

enum class Modality : int { Text = 0, Video = 1, Audio = 2 };

struct ModalSample {
  std::int64_t id = 0;
  Vec x_t, x_v, x_a;
  std::array<bool, 3> present{true, true, true};
  int label = 0;

  const Vec& modality(Modality m) const {
    switch (m) {
      case Modality::Text: return x_t;
      case Modality::Video: return x_v;
      default: return x_a;
    }
  }
  Vec& modality(Modality m) {
    switch (m) {
      case Modality::Text: return x_t;
      case Modality::Video: return x_v;
      default: return x_a;
    }
  }
  bool has(Modality m) const { return present[int(m)]; }
};

struct EvidenceItem {
  std::int64_t id = 0;
  Vec e_t, e_v, e_a;
  int label = 0;

  const Vec& modality(Modality m) const {
    switch (m) {
      case Modality::Text: return e_t;
      case Modality::Video: return e_v;
      default: return e_a;
    }
  }
};

struct SynthSpec {
  int num_labels = 6;
  int dim = 16;
  int train_per_label = 200;
  int test_per_label = 100;
  int corpus_per_label = 200;
  double separation = 3.0;                    // centroid scale
  std::array<double, 3> noise{1.0, 1.0, 1.0};  // sigma_t, sigma_v, sigma_a
  std::vector<std::pair<int, int>> confusion_pairs{{0, 1}, {2, 3}, {4, 5}};
  std::uint64_t seed = 1;

  void validate() const {
    require(num_labels >= 2, "SynthSpec: num_labels must be >= 2");
    require(dim >= 2, "SynthSpec: dim must be >= 2");
    require(train_per_label >= 1 && test_per_label >= 1 && corpus_per_label >= 1,
            "SynthSpec: sample counts must be positive");
    require(separation >= 0.0, "SynthSpec: separation must be >= 0");
    for (double s : noise) require(s >= 0.0, "SynthSpec: noise must be >= 0");
    for (auto [a, b] : confusion_pairs)
      require(a >= 0 && b >= 0 && a < num_labels && b < num_labels && a != b,
              "SynthSpec: invalid confusion pair");
  }
};

struct Dataset {
  std::vector<ModalSample> train;
  std::vector<ModalSample> test;
  std::vector<EvidenceItem> corpus;
  // Per-label, per-modality generator centroids (label-major). Kept so the
  // SFT teachers and degenerate-query construction can use true centroids.
  std::vector<std::array<Vec, 3>> centroids;
};

// All samples of a label are drawn around label-specific per-modality
// centroids. For each confusion pair (a, b), b's text centroid is a's plus a
// small jitter, while their video/audio centroids stay independent.
inline Dataset generate_dataset(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  Dataset ds;
  ds.centroids.resize(spec.num_labels);
  for (int c = 0; c < spec.num_labels; ++c)
    for (int m = 0; m < 3; ++m) {
      Vec& cen = ds.centroids[c][m];
      cen.resize(spec.dim);
      for (double& x : cen) x = spec.separation * rng.normal();
    }
  for (auto [a, b] : spec.confusion_pairs) {
    Vec& tb = ds.centroids[b][int(Modality::Text)];
    const Vec& ta = ds.centroids[a][int(Modality::Text)];
    for (int i = 0; i < spec.dim; ++i)
      tb[i] = ta[i] + 0.05 * spec.separation * rng.normal();
  }

  std::int64_t next_id = 0;
  auto draw_around = [&](int label, Modality m) {
    Vec v = ds.centroids[label][int(m)];
    double sigma = spec.noise[int(m)];
    for (double& x : v) x += sigma * rng.normal();
    return v;
  };
  auto draw_sample = [&](int label) {
    ModalSample s;
    s.id = next_id++;
    s.label = label;
    s.x_t = draw_around(label, Modality::Text);
    s.x_v = draw_around(label, Modality::Video);
    s.x_a = draw_around(label, Modality::Audio);
    return s;
  };

  for (int c = 0; c < spec.num_labels; ++c)
    for (int i = 0; i < spec.train_per_label; ++i) ds.train.push_back(draw_sample(c));
  for (int c = 0; c < spec.num_labels; ++c)
    for (int i = 0; i < spec.test_per_label; ++i) ds.test.push_back(draw_sample(c));
  for (int c = 0; c < spec.num_labels; ++c)
    for (int i = 0; i < spec.corpus_per_label; ++i) {
      ModalSample s = draw_sample(c);
      EvidenceItem e;
      e.id = s.id;
      e.label = c;
      e.e_t = std::move(s.x_t);
      e.e_v = std::move(s.x_v);
      e.e_a = std::move(s.x_a);
      ds.corpus.push_back(std::move(e));
    }
  return ds;
}

// Clears the presence bit and zeroes the dropped vector. Substitution with
// perceptual evidence happens downstream in fusion, not here.
inline ModalSample apply_missing(const ModalSample& sample, Modality drop) {
  int others = 0;
  for (int m = 0; m < 3; ++m)
    if (m != int(drop) && sample.present[m]) ++others;
  require(others >= 1, "apply_missing: dropping the only present modality");
  ModalSample out = sample;
  out.present[int(drop)] = false;
  std::fill(out.modality(drop).begin(), out.modality(drop).end(), 0.0);
  return out;
}

enum class F1Mode { Macro, Weighted };

// Per-class F1 over the classes that appear in gold or pred; macro averages
// them uniformly, weighted averages by gold support.
inline double score_f1(const std::vector<int>& pred, const std::vector<int>& gold,
                       F1Mode mode = F1Mode::Macro) {
  require(pred.size() == gold.size(), "score_f1: length mismatch");
  require(!pred.empty(), "score_f1: empty inputs");
  std::set<int> classes(gold.begin(), gold.end());
  classes.insert(pred.begin(), pred.end());
  std::map<int, std::array<std::int64_t, 3>> counts;  // tp, fp, fn
  for (int c : classes) counts[c] = {0, 0, 0};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == gold[i]) {
      counts[gold[i]][0]++;
    } else {
      counts[pred[i]][1]++;
      counts[gold[i]][2]++;
    }
  }
  double sum = 0.0, wsum = 0.0;
  for (int c : classes) {
    auto [tp, fp, fn] = counts[c];
    double f1 = (2 * tp + fp + fn) > 0 ? 2.0 * tp / double(2 * tp + fp + fn) : 0.0;
    sum += f1;
    wsum += f1 * double(tp + fn);
  }
  if (mode == F1Mode::Macro) return sum / double(classes.size());
  return wsum / double(pred.size());
}

// ---------------------------------------------------------------------------
// JSON-lines serialization. One object per line:
//   {id, label, present:[b,b,b], x_t:[...], x_v:[...], x_a:[...]}
// Corpus files use the same schema without the present mask.

inline nlohmann::json sample_to_json(const ModalSample& s) {
  return {{"id", s.id},
          {"label", s.label},
          {"present", {s.present[0], s.present[1], s.present[2]}},
          {"x_t", s.x_t},
          {"x_v", s.x_v},
          {"x_a", s.x_a}};
}

inline ModalSample sample_from_json(const nlohmann::json& j) {
  ModalSample s;
  s.id = j.at("id").get<std::int64_t>();
  s.label = j.at("label").get<int>();
  auto p = j.at("present");
  for (int m = 0; m < 3; ++m) s.present[m] = p.at(m).get<bool>();
  s.x_t = j.at("x_t").get<Vec>();
  s.x_v = j.at("x_v").get<Vec>();
  s.x_a = j.at("x_a").get<Vec>();
  return s;
}

inline nlohmann::json evidence_to_json(const EvidenceItem& e) {
  return {{"id", e.id}, {"label", e.label}, {"x_t", e.e_t}, {"x_v", e.e_v}, {"x_a", e.e_a}};
}

inline EvidenceItem evidence_from_json(const nlohmann::json& j) {
  EvidenceItem e;
  e.id = j.at("id").get<std::int64_t>();
  e.label = j.at("label").get<int>();
  e.e_t = j.at("x_t").get<Vec>();
  e.e_v = j.at("x_v").get<Vec>();
  e.e_a = j.at("x_a").get<Vec>();
  return e;
}

template <class T, class ToJson>
void write_jsonl(const std::string& path, const std::vector<T>& rows, ToJson to_json) {
  std::ofstream out(path);
  require(out.good(), "write_jsonl: cannot open " + path);
  for (const T& r : rows) out << to_json(r).dump() << "\n";
  require(out.good(), "write_jsonl: write failed for " + path);
}

template <class T, class FromJson>
std::vector<T> read_jsonl(const std::string& path, FromJson from_json) {
  std::ifstream in(path);
  require(in.good(), "read_jsonl: cannot open " + path);
  std::vector<T> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(from_json(nlohmann::json::parse(line)));
  }
  return rows;
}

inline void write_samples(const std::string& path, const std::vector<ModalSample>& v) {
  write_jsonl(path, v, sample_to_json);
}
inline std::vector<ModalSample> read_samples(const std::string& path) {
  return read_jsonl<ModalSample>(path, sample_from_json);
}
inline void write_corpus(const std::string& path, const std::vector<EvidenceItem>& v) {
  write_jsonl(path, v, evidence_to_json);
}
inline std::vector<EvidenceItem> read_corpus(const std::string& path) {
  return read_jsonl<EvidenceItem>(path, evidence_from_json);
}

}  // namespace affect
