#pragma once

#include <deque>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "sgelab/envs.hpp"
#include "sgelab/policy.hpp"

namespace sgelab {

struct StrategyRecord {
  int task_id = 0;
  std::vector<std::vector<int>> strategy_tokens;  // per step
  bool success = false;
  std::vector<double> feedback;  // final-observation feature snapshot
  int origin_update = 0;
};

// Bounded per-task FIFO buffer; eviction order is insertion order.
class StrategyBuffer {
 public:
  explicit StrategyBuffer(int capacity = 32) : capacity_(capacity) {}

  void push(const StrategyRecord& rec) {
    auto& q = records_[rec.task_id];
    q.push_back(rec);
    if (static_cast<int>(q.size()) > capacity_) q.pop_front();
  }

  int size(int task_id) const {
    auto it = records_.find(task_id);
    return it == records_.end() ? 0 : static_cast<int>(it->second.size());
  }

  const std::deque<StrategyRecord>& entries(int task_id) const {
    static const std::deque<StrategyRecord> kEmpty;
    auto it = records_.find(task_id);
    return it == records_.end() ? kEmpty : it->second;
  }

  const StrategyRecord* draw(int task_id, Rng& rng) const {
    auto it = records_.find(task_id);
    if (it == records_.end() || it->second.empty()) return nullptr;
    return &it->second[rng.next_below(it->second.size())];
  }

  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::map<int, std::deque<StrategyRecord>> records_;
};

struct StrategyBuffers {
  StrategyBuffer good;  // B_G
  StrategyBuffer bad;   // B_B

  explicit StrategyBuffers(int capacity = 32)
      : good(capacity), bad(capacity) {}
};

inline ReflectionContext reflection_from(const StrategyRecord& rec,
                                         Polarity polarity) {
  ReflectionContext ctx;
  ctx.polarity = polarity;
  ctx.strategy_tokens = rec.strategy_tokens;
  ctx.feedback = rec.feedback;
  return ctx;
}

// With probability p_B draw a failed strategy, else-if with probability p_G
// a successful one. A branch taken on an empty buffer yields no reflection.
inline std::optional<ReflectionContext> draw_reflection(
    const StrategyBuffers& buffers, int task_id, double p_B, double p_G,
    Rng& rng) {
  if (rng.next_double() < p_B) {
    if (const StrategyRecord* r = buffers.bad.draw(task_id, rng))
      return reflection_from(*r, Polarity::kNegative);
    return std::nullopt;
  }
  if (rng.next_double() < p_G) {
    if (const StrategyRecord* r = buffers.good.draw(task_id, rng))
      return reflection_from(*r, Polarity::kPositive);
  }
  return std::nullopt;
}

struct RolloutOptions {
  int group_size = 16;  // K
  double tau = 0.7;
  double tau_s = 1.2;
  double p_B = 0.25;
  double p_G = 0.1;
  bool per_step_reflection = false;
  double rlad_dropout = 0.0;  // per-trajectory strategy dropout probability
  int origin_update = 0;
};

// Runs one episode. Reflection is drawn once per episode by the caller (or
// per step when `per_step` is set) and becomes part of every step's context.
inline Trajectory rollout_episode(const PolicyParams& policy, Env& env,
                                  const Goal& goal, uint64_t episode_seed,
                                  const RolloutOptions& opt,
                                  const StrategyBuffers& buffers, Rng& rng,
                                  std::optional<ReflectionContext> reflection,
                                  Observation* final_obs = nullptr) {
  const EnvSpec& spec = env.spec();
  Trajectory traj;
  traj.goal = goal;
  traj.seed = episode_seed;
  traj.reflection = reflection;
  if (opt.rlad_dropout > 0.0)
    traj.strategy_dropout = rng.next_double() < opt.rlad_dropout;

  Observation obs = env.reset(goal, episode_seed);
  std::vector<double> ctx, x, lg;
  std::vector<int> strat_tokens;
  bool done = false;
  while (!done) {
    TrajectoryStep step;
    step.obs = obs;
    std::optional<ReflectionContext> step_refl = traj.reflection;
    if (opt.per_step_reflection) {
      step.reflection =
          draw_reflection(buffers, goal.task_id, opt.p_B, opt.p_G, rng);
      step_refl = step.reflection;
    }
    build_context(policy.dims, obs, step_refl, ctx);
    strat_tokens.clear();
    for (int i = 0; i < spec.strategy_len; ++i) {
      policy.logits(Head::kStrategy, ctx, lg);
      TokenEvent ev = sample_token(lg, opt.tau_s, rng, Segment::kStrategy);
      step.strategy.push_back(ev);
      strat_tokens.push_back(ev.token);
    }
    for (int pos = 0; pos < spec.remainder_len; ++pos) {
      build_remainder_input(policy.dims, ctx, strat_tokens, pos,
                            traj.strategy_dropout, x);
      policy.logits(Head::kRemainder, x, lg);
      TokenEvent ev = sample_token(lg, opt.tau, rng, Segment::kRemainder);
      step.remainder.push_back(ev);
      step.action.push_back(ev.token);
    }
    StepOutcome out = env.step(step.action);
    step.outcome = out.outcome;
    traj.steps.push_back(std::move(step));
    traj.terminal_reward = out.reward;
    done = out.done;
    obs = out.obs;
  }
  if (final_obs) *final_obs = obs;
  return traj;
}

inline StrategyRecord record_from(const Trajectory& traj,
                                  const Observation& final_obs,
                                  int origin_update) {
  StrategyRecord rec;
  rec.task_id = traj.goal.task_id;
  for (const auto& step : traj.steps) {
    rec.strategy_tokens.emplace_back();
    for (const auto& ev : step.strategy)
      rec.strategy_tokens.back().push_back(ev.token);
  }
  rec.success = traj.terminal_reward == 1.0;
  rec.feedback = final_obs.features;
  rec.origin_update = origin_update;
  return rec;
}

// Algorithm core: K rollouts for one task with mixed-temperature sampling
// and reflection conditioning. Buffer reads see the state at call time;
// pushes are applied at the end in trajectory order.
inline Group collect_group(const PolicyParams& policy, const Env& env,
                           const Goal& goal, const RolloutOptions& opt,
                           StrategyBuffers& buffers, Rng& rng) {
  Group group;
  group.goal = goal;
  std::vector<StrategyRecord> pending;
  for (int k = 0; k < opt.group_size; ++k) {
    uint64_t episode_seed = rng.next_u64();
    std::optional<ReflectionContext> refl;
    if (!opt.per_step_reflection)
      refl = draw_reflection(buffers, goal.task_id, opt.p_B, opt.p_G, rng);
    auto instance = env.clone();
    Observation final_obs;
    Trajectory traj =
        rollout_episode(policy, *instance, goal, episode_seed, opt, buffers,
                        rng, std::move(refl), &final_obs);
    pending.push_back(record_from(traj, final_obs, opt.origin_update));
    group.trajectories.push_back(std::move(traj));
  }
  for (const auto& rec : pending) {
    if (rec.success)
      buffers.good.push(rec);
    else
      buffers.bad.push(rec);
  }
  return group;
}

// Fraction of distinct per-episode strategy token sequences in a group.
inline double strategy_diversity(const Group& group) {
  std::set<std::vector<int>> distinct;
  for (const auto& traj : group.trajectories) {
    std::vector<int> flat;
    for (const auto& step : traj.steps)
      for (const auto& ev : step.strategy) flat.push_back(ev.token);
    distinct.insert(std::move(flat));
  }
  return static_cast<double>(distinct.size()) /
         static_cast<double>(group.trajectories.size());
}

}  // namespace sgelab
