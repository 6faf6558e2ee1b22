#pragma once

// MAPPO trainer: rollouts with counterfactual reward computation, GAE,
// KL-regularized terminal rewards against the frozen SFT reference, clipped
// actor and critic losses, and the PPO-epoch update loop. RAAF and MB-MoE
// stay in the computation graph: the generator's observation is rebuilt on
// the tape every epoch so fusion parameters receive gradients.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "affect/pipeline.hpp"

namespace affect {

struct Trajectory {
  EpisodeTrace main;
  int pred_label = -1;  // planner replaced by the degenerate label scheme
  int pred_rank = -1;   // filter bypassed
  double score_full = 0.0, score_label = 0.0, score_rank = 0.0;
  double r_p = 0.0, r_f = 0.0, r_g = 0.0;
};

inline double singleton_score(int pred, int gold) {
  return score_f1({pred}, {gold}, F1Mode::Macro);
}

// Full pipeline with sampled actions, then the two counterfactual variants.
// Variants reuse the main rollout's action wherever the observation is
// identical and re-decide greedily where it differs.
inline Trajectory rollout_episode(System& sys, const EvidenceIndex& index,
                                  const RunConfig& cfg, const ModalSample& sample,
                                  Rng& rng, bool greedy = false) {
  Trajectory tr;
  Rng rng_main = rng.spawn(0), rng_label = rng.spawn(1), rng_rank = rng.spawn(2);

  EpisodeOptions main_opt;
  main_opt.greedy = greedy;
  main_opt.record_sft = true;
  tr.main = run_episode(sys, index, cfg, sample, main_opt, rng_main);

  EpisodeOptions label_opt;
  label_opt.greedy = true;
  label_opt.flags.no_planner = true;
  label_opt.reuse = &tr.main;
  tr.pred_label = run_episode(sys, index, cfg, sample, label_opt, rng_label).pred;

  EpisodeOptions rank_opt;
  rank_opt.greedy = true;
  rank_opt.flags.no_filter = true;
  rank_opt.reuse = &tr.main;
  tr.pred_rank = run_episode(sys, index, cfg, sample, rank_opt, rng_rank).pred;

  tr.score_full = singleton_score(tr.main.pred, tr.main.gold);
  tr.score_label = singleton_score(tr.pred_label, tr.main.gold);
  tr.score_rank = singleton_score(tr.pred_rank, tr.main.gold);
  return tr;
}

// R_G = R_shared = Score_full; R_P and R_F add the local incremental gains
// over the counterfactual baselines.
struct Rewards {
  double r_p = 0.0, r_f = 0.0, r_g = 0.0;
};

inline Rewards compute_rewards(double score_full, double score_label, double score_rank,
                               double lambda_p, double lambda_f) {
  Rewards r;
  r.r_g = score_full;
  r.r_p = score_full + lambda_p * (score_full - score_label);
  r.r_f = score_full + lambda_f * (score_full - score_rank);
  return r;
}

inline void compute_rewards(Trajectory& tr, const TrainConfig& cfg) {
  Rewards r = compute_rewards(tr.score_full, tr.score_label, tr.score_rank,
                              cfg.lambda_p, cfg.lambda_f);
  tr.r_p = r.r_p;
  tr.r_f = r.r_f;
  tr.r_g = r.r_g;
}

// Zero until the terminal step; at t = T the task reward minus the KL term
// log pi_old(A|o) - log pi_sft(A|o) scaled by beta.
inline std::vector<double> terminal_reward_with_kl(double reward, double logprob_old,
                                                   double logprob_sft, double beta,
                                                   int steps = 1) {
  require(steps >= 1, "terminal_reward_with_kl: steps must be >= 1");
  std::vector<double> out(steps, 0.0);
  out.back() = reward - beta * (logprob_old - logprob_sft);
  return out;
}

// GAE: delta_t = r_t + gamma V_{t+1} - V_t (V_{T+1} = bootstrap);
// A_t = delta_t + gamma lambda A_{t+1}; V_target = A_t + V_t.
struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;
};

inline GaeResult gae(const std::vector<double>& rewards, const std::vector<double>& values,
                     double bootstrap, double gamma, double lambda) {
  require(rewards.size() == values.size(), "gae: length mismatch");
  require(!rewards.empty(), "gae: empty inputs");
  std::size_t T = rewards.size();
  GaeResult out;
  out.advantages.assign(T, 0.0);
  out.value_targets.assign(T, 0.0);
  double next_adv = 0.0;
  for (std::size_t t = T; t-- > 0;) {
    double next_v = (t + 1 < T) ? values[t + 1] : bootstrap;
    double delta = rewards[t] + gamma * next_v - values[t];
    next_adv = delta + gamma * lambda * next_adv;
    out.advantages[t] = next_adv;
    out.value_targets[t] = next_adv + values[t];
  }
  return out;
}

// ---------------------------------------------------------------------------
// PPO losses on the tape

// One agent-step in the loss batch.
struct PpoStep {
  Role role = Role::Planner;
  const Trajectory* traj = nullptr;
  double logprob_old = 0.0;
  double advantage = 0.0;
  double value_old = 0.0;
  double value_target = 0.0;
};

// -min(r A, clip(r, 1-eps, 1+eps) A) for one step; gradient flows through the
// current-policy logprob only.
inline Tape::Id ppo_surrogate(Tape& tape, Tape::Id logprob_new, double logprob_old,
                              double advantage, double eps) {
  Tape::Id ratio = tape.exp_(tape.sub(logprob_new, tape.constant(logprob_old)));
  Tape::Id surr1 = tape.scale(ratio, advantage);
  Tape::Id surr2 = tape.scale(tape.clip(ratio, 1.0 - eps, 1.0 + eps), advantage);
  return tape.neg(tape.min2(surr1, surr2));
}

// max((V - T)^2, (clip(V, V_old +- eps) - T)^2).
inline Tape::Id clipped_value_loss(Tape& tape, Tape::Id value, double value_old,
                                   double target, double eps) {
  Tape::Id err = tape.sub(value, tape.constant(target));
  Tape::Id sq1 = tape.mul(err, err);
  Tape::Id clipped = tape.clip(value, value_old - eps, value_old + eps);
  Tape::Id err2 = tape.sub(clipped, tape.constant(target));
  Tape::Id sq2 = tape.mul(err2, err2);
  return tape.max2(sq1, sq2);
}

// Rebuilds the differentiable pieces of one trajectory for the current
// parameters: logprob node per role and value node per role. The generator's
// observation is reassembled from the stored prefix plus a fresh fusion
// forward, so RAAF/MB-MoE parameters participate.
struct StepNodes {
  Tape::Id logprob = -1;
  Tape::Id value = -1;
};

inline StepNodes step_nodes(Tape& tape, System& sys, const EpisodeTrace& trace,
                            Role role) {
  const NetDims& dims = sys.policy.dims;
  ActorParams& actor = sys.policy.actor;
  StepNodes out;
  switch (role) {
    case Role::Planner: {
      Tape::Id feats = tape.constant(trace.planner.obs.features);
      out.logprob = logprob_node(tape, dims, actor, sys.policy.planner_sigma,
                                 trace.planner.action, feats);
      out.value = value_node(tape, sys.policy, Role::Planner, feats);
      break;
    }
    case Role::Filter: {
      std::vector<Tape::Id> items = obs_item_nodes(tape, trace.filter.obs);
      out.logprob = logprob_node(tape, dims, actor, sys.policy.planner_sigma,
                                 trace.filter.action, -1, items);
      out.value = value_node(tape, sys.policy, Role::Filter,
                             tape.constant(filter_mean_features(trace.filter.obs)));
      break;
    }
    default: {
      FusedState fs = fuse_pipeline(tape, sys.raaf, sys.moe, trace.sample,
                                    trace.perc_vectors);
      Tape::Id feats = tape.concat(
          tape.concat(tape.constant(trace.gen_prefix), fs.fused_v), fs.fused_a);
      out.logprob = logprob_node(tape, dims, actor, sys.policy.planner_sigma,
                                 trace.generator.action, feats);
      out.value = value_node(tape, sys.policy, Role::Generator, feats);
      break;
    }
  }
  return out;
}

// Joint loss L_actor + alpha L_critic over a batch of steps, as tape nodes.
struct PpoLossNodes {
  Tape::Id actor = -1;
  Tape::Id critic = -1;
  Tape::Id total = -1;
};

inline PpoLossNodes build_ppo_loss(Tape& tape, System& sys,
                                   const std::vector<PpoStep>& steps,
                                   const TrainConfig& cfg) {
  Tape::Id actor_loss = tape.constant(0.0);
  Tape::Id critic_loss = tape.constant(0.0);
  for (const PpoStep& s : steps) {
    StepNodes n = step_nodes(tape, sys, s.traj->main, s.role);
    actor_loss = tape.add(actor_loss, ppo_surrogate(tape, n.logprob, s.logprob_old,
                                                    s.advantage, cfg.clip_eps));
    critic_loss = tape.add(critic_loss,
                           clipped_value_loss(tape, n.value, s.value_old, s.value_target,
                                              cfg.value_clip_eps));
  }
  PpoLossNodes out;
  out.actor = actor_loss;
  out.critic = critic_loss;
  out.total = tape.add(actor_loss, tape.scale(critic_loss, cfg.critic_coef));
  return out;
}

// ---------------------------------------------------------------------------
// Iteration

struct IterationMetrics {
  int iter = 0;
  double mean_score_full = 0.0, mean_score_label = 0.0, mean_score_rank = 0.0;
  double r_p_mean = 0.0, r_f_mean = 0.0;
  double actor_loss = 0.0, critic_loss = 0.0;
  double kl_mean = 0.0;
  double routing_entropy = 0.0;
  double wall_ms = 0.0;
};

inline nlohmann::json metrics_to_json(const IterationMetrics& m) {
  return {{"iter", m.iter},
          {"mean_score_full", m.mean_score_full},
          {"mean_score_label", m.mean_score_label},
          {"mean_score_rank", m.mean_score_rank},
          {"R_P_mean", m.r_p_mean},
          {"R_F_mean", m.r_f_mean},
          {"actor_loss", m.actor_loss},
          {"critic_loss", m.critic_loss},
          {"kl_mean", m.kl_mean},
          {"routing_entropy", m.routing_entropy},
          {"wall_ms", m.wall_ms}};
}

struct TrainerState {
  SgdMomentum opt;
  std::uint64_t episode_counter = 0;

  TrainerState() = default;
  explicit TrainerState(const TrainConfig& cfg)
      : opt(cfg.lr, cfg.momentum, cfg.grad_clip) {}
};

inline void normalize(std::vector<double>& xs) {
  if (xs.size() < 2) return;
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= double(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  double sd = std::sqrt(var / double(xs.size()));
  for (double& x : xs) x = (x - mean) / (sd + 1e-8);
}

// One MAPPO iteration: collect a rollout batch under the frozen current
// policy, compute rewards / KL terminal rewards / GAE, then run ppo_epochs
// joint gradient steps on actor, critic, RAAF, and MB-MoE.
inline IterationMetrics mappo_iteration(System& sys, const EvidenceIndex& index,
                                        const RunConfig& cfg,
                                        const std::vector<ModalSample>& train,
                                        TrainerState& state, Rng& rng, int iter) {
  auto t0 = std::chrono::steady_clock::now();
  const TrainConfig& tc = cfg.train;
  require(sys.policy.sft.has_value(), "mappo_iteration: SFT warm start required first");

  // --- Rollouts ---
  std::vector<Trajectory> batch;
  batch.reserve(std::size_t(tc.batch_episodes));
  for (int e = 0; e < tc.batch_episodes; ++e) {
    const ModalSample& sample = train[rng.integer(train.size())];
    Rng ep_rng = rng.spawn(++state.episode_counter);
    batch.push_back(rollout_episode(sys, index, cfg, sample, ep_rng));
    compute_rewards(batch.back(), tc);
  }

  // --- Per-agent terminal rewards, GAE, advantages ---
  std::array<std::vector<PpoStep>, 3> per_role;
  IterationMetrics m;
  m.iter = iter;
  for (Trajectory& tr : batch) {
    m.mean_score_full += tr.score_full;
    m.mean_score_label += tr.score_label;
    m.mean_score_rank += tr.score_rank;
    m.r_p_mean += tr.r_p;
    m.r_f_mean += tr.r_f;
    m.routing_entropy += tr.main.routing_entropy;

    auto add_step = [&](Role role, const AgentStep& step, double reward) {
      if (role == Role::Filter && step.action.keep.empty()) return;  // no candidates
      std::vector<double> rewards = terminal_reward_with_kl(
          reward, step.logprob, step.sft_logprob, tc.kl_beta);
      GaeResult g = gae(rewards, {step.value}, 0.0, tc.gamma, tc.lambda_gae);
      PpoStep s;
      s.role = role;
      s.traj = &tr;
      s.logprob_old = step.logprob;
      s.advantage = g.advantages[0];
      s.value_old = step.value;
      s.value_target = g.value_targets[0];
      per_role[int(role)].push_back(s);
      m.kl_mean += step.logprob - step.sft_logprob;
    };
    add_step(Role::Planner, tr.main.planner, tr.r_p);
    add_step(Role::Filter, tr.main.filter, tr.r_f);
    add_step(Role::Generator, tr.main.generator, tr.r_g);
  }
  double n = double(batch.size());
  m.mean_score_full /= n;
  m.mean_score_label /= n;
  m.mean_score_rank /= n;
  m.r_p_mean /= n;
  m.r_f_mean /= n;
  m.routing_entropy /= n;
  std::size_t n_steps = per_role[0].size() + per_role[1].size() + per_role[2].size();
  m.kl_mean /= double(n_steps);

  if (tc.normalize_advantages) {
    for (auto& steps : per_role) {
      std::vector<double> adv;
      for (const PpoStep& s : steps) adv.push_back(s.advantage);
      normalize(adv);
      for (std::size_t i = 0; i < steps.size(); ++i) steps[i].advantage = adv[i];
    }
  }
  std::vector<PpoStep> steps;
  for (auto& rs : per_role) steps.insert(steps.end(), rs.begin(), rs.end());

  // --- PPO epochs (full-batch gradient steps) ---
  std::vector<Param*> params = sys.trainable_params();
  for (int epoch = 0; epoch < tc.ppo_epochs; ++epoch) {
    Tape tape;
    PpoLossNodes loss = build_ppo_loss(tape, sys, steps, tc);
    double actor_v = tape.value(loss.actor)[0];
    double critic_v = tape.value(loss.critic)[0];
    if (!std::isfinite(actor_v) || !std::isfinite(critic_v))
      throw std::runtime_error(
          "mappo_iteration: non-finite loss at iter " + std::to_string(iter) +
          " epoch " + std::to_string(epoch) + " (actor=" + std::to_string(actor_v) +
          ", critic=" + std::to_string(critic_v) + ")");
    if (epoch == 0) {
      m.actor_loss = actor_v;
      m.critic_loss = critic_v;
    }
    if (tc.lr != 0.0) {
      zero_grads(params);
      tape.backward(loss.total);
      state.opt.step(params);
    }
  }

  m.wall_ms = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - t0)
                  .count();
  return m;
}

}  // namespace affect
