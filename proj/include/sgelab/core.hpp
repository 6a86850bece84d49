#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sgelab/common.hpp"

namespace sgelab {

enum class Split { kTrain, kTest };

inline const char* split_name(Split s) {
  return s == Split::kTrain ? "train" : "test";
}

struct Goal {
  int task_id = 0;
  Split split = Split::kTrain;
};

// Environment-level equivalence class of an action's effect.
using OutcomeId = int64_t;

enum class Segment { kStrategy, kRemainder };

// One sampled token together with everything needed to re-evaluate its
// probability later: the natural-log probability under the tempered softmax
// it was drawn from, and that temperature.
struct TokenEvent {
  int token = 0;
  double logprob = 0.0;
  double temperature = 1.0;
  Segment segment = Segment::kRemainder;
};

struct Observation {
  int step_index = 1;  // 1-based
  std::vector<double> features;
  std::vector<int> raw_feedback;  // e.g. failing-check indices; may be empty
};

enum class Polarity { kPositive, kNegative };

// Reflection signal attached to a rollout: the strategy tokens of a stored
// episode from the same task, its feedback snapshot, and whether it came
// from the success or the failure buffer.
struct ReflectionContext {
  Polarity polarity = Polarity::kNegative;
  std::vector<std::vector<int>> strategy_tokens;  // per step
  std::vector<double> feedback;                   // feature-space snapshot
};

struct TrajectoryStep {
  Observation obs;
  std::vector<TokenEvent> strategy;
  std::vector<TokenEvent> remainder;
  std::vector<int> action;  // decoded remainder token ids
  OutcomeId outcome = 0;
  // Only set in the per-step reflection variant; overrides the episode-level
  // reflection for this step's context.
  std::optional<ReflectionContext> reflection;
};

struct Trajectory {
  Goal goal;
  std::vector<TrajectoryStep> steps;
  double terminal_reward = 0.0;  // in {0, 1}, assigned after the last step
  std::optional<ReflectionContext> reflection;
  bool strategy_dropout = false;  // remainder head ignored strategy tokens
  uint64_t seed = 0;
};

inline double episode_return(const Trajectory& traj) {
  return traj.terminal_reward;
}

// K trajectories for the same task, the unit of group-relative advantage
// estimation.
struct Group {
  Goal goal;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;  // empty until computed
};

// Static description of an environment; the shape contract every other
// module validates against.
struct EnvSpec {
  std::string name;
  int vocab = 16;            // V
  int strategy_len = 1;      // L_s, strategy tokens per step
  int remainder_len = 2;     // L_r
  int horizon = 3;           // M
  int obs_dim = 0;
  int train_tasks = 32;
  int test_tasks = 16;

  int total_tasks() const { return train_tasks + test_tasks; }
};

inline void validate_trajectory(const Trajectory& traj, const EnvSpec& spec) {
  if (traj.steps.empty()) throw InvariantViolation("steps");
  if (static_cast<int>(traj.steps.size()) > spec.horizon)
    throw InvariantViolation("horizon");
  int n = traj.goal.split == Split::kTrain ? spec.train_tasks : spec.test_tasks;
  int lo = traj.goal.split == Split::kTrain ? 0 : spec.train_tasks;
  if (traj.goal.task_id < lo || traj.goal.task_id >= lo + n)
    throw InvariantViolation("task id");
  if (traj.terminal_reward != 0.0 && traj.terminal_reward != 1.0)
    throw InvariantViolation("terminal reward");
  for (const auto& step : traj.steps) {
    if (step.strategy.empty() || step.remainder.empty())
      throw InvariantViolation("empty token segment");
    if (static_cast<int>(step.obs.features.size()) != spec.obs_dim)
      throw InvariantViolation("observation dimension");
    if (step.obs.step_index < 1 || step.obs.step_index > spec.horizon)
      throw InvariantViolation("step index");
    for (const auto& ev : step.strategy) {
      if (ev.token < 0 || ev.token >= spec.vocab)
        throw InvariantViolation("token range");
      if (ev.segment != Segment::kStrategy)
        throw InvariantViolation("segment tag");
    }
    for (const auto& ev : step.remainder) {
      if (ev.token < 0 || ev.token >= spec.vocab)
        throw InvariantViolation("token range");
      if (ev.segment != Segment::kRemainder)
        throw InvariantViolation("segment tag");
    }
    for (const auto& ev : step.strategy)
      if (ev.logprob > 0.0 || ev.temperature <= 0.0)
        throw InvariantViolation("token event");
    for (const auto& ev : step.remainder)
      if (ev.logprob > 0.0 || ev.temperature <= 0.0)
        throw InvariantViolation("token event");
  }
}

// One JSON object per trajectory, for offline analysis. Field names are part
// of the format: task_id, split, steps, terminal_reward, seed.
inline void write_trajectory_record(std::ostream& os, const Trajectory& t) {
  os << "{\"task_id\":" << t.goal.task_id << ",\"split\":\""
     << split_name(t.goal.split) << "\",\"steps\":[";
  for (size_t i = 0; i < t.steps.size(); ++i) {
    const auto& s = t.steps[i];
    if (i) os << ',';
    os << "{\"strategy\":[";
    for (size_t j = 0; j < s.strategy.size(); ++j)
      os << (j ? "," : "") << s.strategy[j].token;
    os << "],\"remainder\":[";
    for (size_t j = 0; j < s.remainder.size(); ++j)
      os << (j ? "," : "") << s.remainder[j].token;
    os << "],\"outcome\":" << s.outcome << "}";
  }
  os << "],\"terminal_reward\":" << format_real(t.terminal_reward)
     << ",\"seed\":" << t.seed << "}\n";
}

}  // namespace sgelab
