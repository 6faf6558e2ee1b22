#pragma once

// RunConfig: every knob for synthesis, retrieval, fusion, agents, training,
// and the ablation matrix. Serializable to/from a single JSON file; a run is
// fully determined by (config, code version).

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "affect/envsynth.hpp"

namespace affect {

struct RetrievalConfig {
  int k_cog = 8;   // per query kind
  int k_perc = 4;  // per modality
};

struct FusionConfig {
  int num_experts = 4;
  int top_k = 2;
  int expert_hidden = 16;
};

struct AgentConfig {
  int hidden = 64;
  double planner_sigma = 0.3;  // fixed Gaussian std for query actions
};

struct TrainConfig {
  double gamma = 0.99;
  double lambda_gae = 0.95;
  double clip_eps = 0.2;
  double value_clip_eps = 0.2;  // defaults equal to clip_eps
  double kl_beta = 0.05;
  double critic_coef = 0.5;    // alpha in L = L_actor + alpha * L_critic
  double lambda_p = 1.0;
  double lambda_f = 1.0;
  int ppo_epochs = 4;
  int batch_episodes = 64;
  double lr = 0.005;
  double momentum = 0.9;
  double grad_clip = 5.0;  // global-norm clip; <= 0 disables
  int iterations = 40;
  int sft_epochs = 3;
  double sft_lr = 0.002;
  bool normalize_advantages = true;

  void validate() const {
    require(gamma > 0.0 && gamma <= 1.0, "TrainConfig: gamma out of (0,1]");
    require(lambda_gae > 0.0 && lambda_gae <= 1.0, "TrainConfig: lambda_gae out of (0,1]");
    require(clip_eps > 0.0, "TrainConfig: clip_eps must be > 0");
    require(kl_beta >= 0.0 && critic_coef >= 0.0 && lambda_p >= 0.0 && lambda_f >= 0.0,
            "TrainConfig: coefficients must be >= 0");
  }
};

// Modality drop for the missing-modality evaluation protocol.
enum class DropModality : int { None = -1, Text = 0, Video = 1, Audio = 2 };

struct AblationFlags {
  bool no_planner = false;          // queries replaced by the degenerate label scheme
  bool no_filter = false;           // filter bypass: TopK per cognitive list kept
  bool no_confuse_evidence = false; // drop the confusing cognitive list
  bool no_counter_evidence = false; // drop the countering cognitive list
  bool no_retrieval = false;        // zero all evidence inputs
  bool naive_rag = false;           // perceptual retrieval only, no planner/filter
  DropModality drop_modality = DropModality::None;
  bool no_substitution = false;     // disable the missing-modality substitution

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct RunConfig {
  SynthSpec synth;
  RetrievalConfig retrieval;
  FusionConfig fusion;
  AgentConfig agents;
  TrainConfig train;
  AblationFlags ablation;
  std::uint64_t seed = 42;
  std::string out_dir = "out";
};

// --- JSON (de)serialization -------------------------------------------------

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = {{"num_labels", s.num_labels},
       {"dim", s.dim},
       {"train_per_label", s.train_per_label},
       {"test_per_label", s.test_per_label},
       {"corpus_per_label", s.corpus_per_label},
       {"separation", s.separation},
       {"noise", s.noise},
       {"confusion_pairs", s.confusion_pairs},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  s = SynthSpec{};
  if (j.contains("num_labels")) j.at("num_labels").get_to(s.num_labels);
  if (j.contains("dim")) j.at("dim").get_to(s.dim);
  if (j.contains("train_per_label")) j.at("train_per_label").get_to(s.train_per_label);
  if (j.contains("test_per_label")) j.at("test_per_label").get_to(s.test_per_label);
  if (j.contains("corpus_per_label")) j.at("corpus_per_label").get_to(s.corpus_per_label);
  if (j.contains("separation")) j.at("separation").get_to(s.separation);
  if (j.contains("noise")) j.at("noise").get_to(s.noise);
  if (j.contains("confusion_pairs")) j.at("confusion_pairs").get_to(s.confusion_pairs);
  if (j.contains("seed")) j.at("seed").get_to(s.seed);
}

#define AFFECT_JSON_FIELD(j, obj, f) \
  if (j.contains(#f)) j.at(#f).get_to(obj.f)

inline void to_json(nlohmann::json& j, const RetrievalConfig& c) {
  j = {{"k_cog", c.k_cog}, {"k_perc", c.k_perc}};
}
inline void from_json(const nlohmann::json& j, RetrievalConfig& c) {
  c = RetrievalConfig{};
  AFFECT_JSON_FIELD(j, c, k_cog);
  AFFECT_JSON_FIELD(j, c, k_perc);
}

inline void to_json(nlohmann::json& j, const FusionConfig& c) {
  j = {{"num_experts", c.num_experts}, {"top_k", c.top_k}, {"expert_hidden", c.expert_hidden}};
}
inline void from_json(const nlohmann::json& j, FusionConfig& c) {
  c = FusionConfig{};
  AFFECT_JSON_FIELD(j, c, num_experts);
  AFFECT_JSON_FIELD(j, c, top_k);
  AFFECT_JSON_FIELD(j, c, expert_hidden);
}

inline void to_json(nlohmann::json& j, const AgentConfig& c) {
  j = {{"hidden", c.hidden}, {"planner_sigma", c.planner_sigma}};
}
inline void from_json(const nlohmann::json& j, AgentConfig& c) {
  c = AgentConfig{};
  AFFECT_JSON_FIELD(j, c, hidden);
  AFFECT_JSON_FIELD(j, c, planner_sigma);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"gamma", c.gamma},
       {"lambda_gae", c.lambda_gae},
       {"clip_eps", c.clip_eps},
       {"value_clip_eps", c.value_clip_eps},
       {"kl_beta", c.kl_beta},
       {"critic_coef", c.critic_coef},
       {"lambda_p", c.lambda_p},
       {"lambda_f", c.lambda_f},
       {"ppo_epochs", c.ppo_epochs},
       {"batch_episodes", c.batch_episodes},
       {"lr", c.lr},
       {"momentum", c.momentum},
       {"grad_clip", c.grad_clip},
       {"iterations", c.iterations},
       {"sft_epochs", c.sft_epochs},
       {"sft_lr", c.sft_lr},
       {"normalize_advantages", c.normalize_advantages}};
}
inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  AFFECT_JSON_FIELD(j, c, gamma);
  AFFECT_JSON_FIELD(j, c, lambda_gae);
  AFFECT_JSON_FIELD(j, c, clip_eps);
  AFFECT_JSON_FIELD(j, c, value_clip_eps);
  AFFECT_JSON_FIELD(j, c, kl_beta);
  AFFECT_JSON_FIELD(j, c, critic_coef);
  AFFECT_JSON_FIELD(j, c, lambda_p);
  AFFECT_JSON_FIELD(j, c, lambda_f);
  AFFECT_JSON_FIELD(j, c, ppo_epochs);
  AFFECT_JSON_FIELD(j, c, batch_episodes);
  AFFECT_JSON_FIELD(j, c, lr);
  AFFECT_JSON_FIELD(j, c, momentum);
  AFFECT_JSON_FIELD(j, c, grad_clip);
  AFFECT_JSON_FIELD(j, c, iterations);
  AFFECT_JSON_FIELD(j, c, sft_epochs);
  AFFECT_JSON_FIELD(j, c, sft_lr);
  AFFECT_JSON_FIELD(j, c, normalize_advantages);
}

inline void to_json(nlohmann::json& j, const AblationFlags& a) {
  static const char* drops[] = {"t", "v", "a"};
  j = {{"no_planner", a.no_planner},
       {"no_filter", a.no_filter},
       {"no_confuse_evidence", a.no_confuse_evidence},
       {"no_counter_evidence", a.no_counter_evidence},
       {"no_retrieval", a.no_retrieval},
       {"naive_rag", a.naive_rag},
       {"drop_modality",
        a.drop_modality == DropModality::None ? "none" : drops[int(a.drop_modality)]},
       {"no_substitution", a.no_substitution}};
}
inline void from_json(const nlohmann::json& j, AblationFlags& a) {
  a = AblationFlags{};
  AFFECT_JSON_FIELD(j, a, no_planner);
  AFFECT_JSON_FIELD(j, a, no_filter);
  AFFECT_JSON_FIELD(j, a, no_confuse_evidence);
  AFFECT_JSON_FIELD(j, a, no_counter_evidence);
  AFFECT_JSON_FIELD(j, a, no_retrieval);
  AFFECT_JSON_FIELD(j, a, naive_rag);
  AFFECT_JSON_FIELD(j, a, no_substitution);
  if (j.contains("drop_modality")) {
    std::string s = j.at("drop_modality").get<std::string>();
    if (s == "none") a.drop_modality = DropModality::None;
    else if (s == "t") a.drop_modality = DropModality::Text;
    else if (s == "v") a.drop_modality = DropModality::Video;
    else if (s == "a") a.drop_modality = DropModality::Audio;
    else throw std::runtime_error("drop_modality must be one of none|t|v|a");
  }
}

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"synth", c.synth},       {"retrieval", c.retrieval}, {"fusion", c.fusion},
       {"agents", c.agents},     {"train", c.train},         {"ablation", c.ablation},
       {"seed", c.seed},         {"out_dir", c.out_dir}};
}
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c = RunConfig{};
  AFFECT_JSON_FIELD(j, c, synth);
  AFFECT_JSON_FIELD(j, c, retrieval);
  AFFECT_JSON_FIELD(j, c, fusion);
  AFFECT_JSON_FIELD(j, c, agents);
  AFFECT_JSON_FIELD(j, c, train);
  AFFECT_JSON_FIELD(j, c, ablation);
  AFFECT_JSON_FIELD(j, c, seed);
  AFFECT_JSON_FIELD(j, c, out_dir);
}

#undef AFFECT_JSON_FIELD

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "load_config: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return j.get<RunConfig>();
}

inline void save_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "save_config: cannot open " + path);
  out << nlohmann::json(cfg).dump(2) << "\n";
}

// FNV-1a over the canonical JSON dump; carried by every command output. The
// output directory is excluded: it cannot influence any computed result.
inline std::string config_hash(const RunConfig& cfg) {
  RunConfig canon = cfg;
  canon.out_dir.clear();
  std::string s = nlohmann::json(canon).dump();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace affect
