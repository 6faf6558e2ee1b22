#pragma once

// Checkpoint file: a JSON header (version, mode, config, section layout)
// followed by length-prefixed named float64 arrays, all little-endian.
// Train-mode checkpoints carry every section; eval-mode checkpoints drop the
// critic and SFT reference, which are discarded after training.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affect/pipeline.hpp"

namespace affect {

inline constexpr const char* kCheckpointMagic = "affectagent-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Section {
  std::string name;
  std::vector<Param*> params;
};

inline std::vector<Section> checkpoint_sections(System& sys, bool eval_mode) {
  std::vector<Section> out;
  out.push_back({"trunk", sys.policy.actor.trunk.params()});
  Section heads{"heads", {}};
  for (Param* p : sys.policy.actor.planner_head.params()) heads.params.push_back(p);
  for (Param* p : sys.policy.actor.filter_head.params()) heads.params.push_back(p);
  for (Param* p : sys.policy.actor.generator_head.params()) heads.params.push_back(p);
  out.push_back(std::move(heads));
  if (!eval_mode) {
    out.push_back({"critic", sys.policy.critic_head.params()});
    if (sys.policy.sft) out.push_back({"sft", sys.policy.sft->params()});
  }
  out.push_back({"raaf", sys.raaf.params()});
  out.push_back({"moe", sys.moe.params()});
  return out;
}

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
  os.write(b, 8);
}

inline std::uint64_t get_u64(std::istream& is) {
  char b[8];
  is.read(b, 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b[i])) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  put_u64(os, bits);
}

inline double get_f64(std::istream& is) {
  std::uint64_t bits = get_u64(is);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put_u64(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

inline std::string get_string(std::istream& is) {
  std::uint64_t n = get_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, System& sys, const RunConfig& cfg,
                            bool eval_mode = false) {
  std::vector<Section> sections = checkpoint_sections(sys, eval_mode);
  nlohmann::json layout = nlohmann::json::object();
  for (const Section& sec : sections) {
    nlohmann::json arrays = nlohmann::json::array();
    for (const Param* p : sec.params)
      arrays.push_back({{"name", p->name}, {"len", p->size()}});
    layout[sec.name] = arrays;
  }
  RunConfig canon = cfg;  // path-independent: same run -> same bytes anywhere
  canon.out_dir.clear();
  nlohmann::json header = {{"magic", kCheckpointMagic},
                           {"version", kCheckpointVersion},
                           {"mode", eval_mode ? "eval" : "train"},
                           {"config", canon},
                           {"config_hash", config_hash(canon)},
                           {"sections", layout}};

  std::ofstream os(path, std::ios::binary);
  require(bool(os), "checkpoint: cannot open for writing: " + path);
  detail::put_string(os, header.dump());
  for (const Section& sec : sections)
    for (const Param* p : sec.params) {
      detail::put_string(os, sec.name + "/" + p->name);
      detail::put_u64(os, p->size());
      for (double x : p->value) detail::put_f64(os, x);
    }
  require(bool(os), "checkpoint: write failed: " + path);
}

struct LoadedCheckpoint {
  RunConfig config;
  bool eval_mode = false;
  System system;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(bool(is), "checkpoint: cannot open: " + path);
  nlohmann::json header = nlohmann::json::parse(detail::get_string(is));
  require(header.value("magic", std::string()) == kCheckpointMagic,
          "checkpoint: bad magic in " + path);
  require(header.value("version", -1) == kCheckpointVersion,
          "checkpoint: unsupported version in " + path);

  LoadedCheckpoint out;
  out.config = header.at("config").get<RunConfig>();
  out.eval_mode = header.value("mode", std::string()) == "eval";
  Rng rng(out.config.seed);
  out.system = make_system(out.config, rng);
  if (!out.eval_mode) out.system.policy.sft = out.system.policy.actor;

  std::vector<Section> sections = checkpoint_sections(out.system, out.eval_mode);
  for (const Section& sec : sections) {
    require(header.at("sections").contains(sec.name),
            "checkpoint: missing section '" + sec.name + "' in " + path);
    for (Param* p : sec.params) {
      std::string key = detail::get_string(is);
      require(bool(is) && key == sec.name + "/" + p->name,
              "checkpoint: section '" + sec.name + "' mismatch: expected array '" +
                  p->name + "', found '" + key + "'");
      std::uint64_t n = detail::get_u64(is);
      require(n == p->size(), "checkpoint: section '" + sec.name + "' array '" +
                                  p->name + "' length mismatch");
      for (std::size_t i = 0; i < p->size(); ++i) p->value[i] = detail::get_f64(is);
    }
  }
  require(bool(is), "checkpoint: truncated file: " + path);
  return out;
}

}  // namespace affect
