#pragma once

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <vector>

#include "sgelab/core.hpp"

namespace sgelab {

struct UnknownTask : std::runtime_error {
  UnknownTask() : std::runtime_error("unknown task") {}
};
struct EpisodeFinished : std::runtime_error {
  EpisodeFinished() : std::runtime_error("episode already finished") {}
};
struct MalformedAction : std::runtime_error {
  MalformedAction() : std::runtime_error("malformed action") {}
};

struct StepOutcome {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  OutcomeId outcome = 0;
};

// Single-episode, single-owner environment instance. Parallel rollouts each
// get their own instance via clone().
class Env {
 public:
  virtual ~Env() = default;

  const EnvSpec& spec() const { return spec_; }

  std::vector<Goal> tasks(Split split) const {
    std::vector<Goal> out;
    int lo = split == Split::kTrain ? 0 : spec_.train_tasks;
    int n = split == Split::kTrain ? spec_.train_tasks : spec_.test_tasks;
    out.reserve(n);
    for (int i = 0; i < n; ++i) out.push_back(Goal{lo + i, split});
    return out;
  }

  virtual Observation reset(const Goal& goal, uint64_t seed) = 0;
  virtual StepOutcome step(const std::vector<int>& action_tokens) = 0;
  // Pure classification of an action's effect given the current state.
  virtual OutcomeId outcome_class(const std::vector<int>& action_tokens) const = 0;
  virtual std::unique_ptr<Env> clone() const = 0;

  // Hooks used to construct the concentrated base policy: the designated
  // (wrong for every task) strategy token per step, the intent a strategy
  // token expresses, and which remainder tokens faithfully realize an
  // intent at a given remainder position.
  virtual int designated_strategy_token(int step) const = 0;  // 0-based step
  virtual int intent_of_token(int strategy_token) const = 0;
  virtual std::vector<int> faithful_tokens(int intent, int position) const = 0;

 protected:
  EnvSpec spec_;
  Goal goal_;
  uint64_t seed_ = 0;
  int step_ = 0;     // steps taken
  bool active_ = false;
  bool done_ = true;

  void check_goal(const Goal& goal) const {
    int lo = goal.split == Split::kTrain ? 0 : spec_.train_tasks;
    int n = goal.split == Split::kTrain ? spec_.train_tasks : spec_.test_tasks;
    if (goal.task_id < lo || goal.task_id >= lo + n) throw UnknownTask();
  }

  void check_action(const std::vector<int>& a) const {
    if (!active_) throw EpisodeFinished();
    if (static_cast<int>(a.size()) != spec_.remainder_len)
      throw MalformedAction();
    for (int t : a)
      if (t < 0 || t >= spec_.vocab) throw MalformedAction();
  }

  // Common observation prefix: task one-hot followed by step one-hot.
  std::vector<double> obs_prefix(int next_step) const {
    std::vector<double> f(spec_.obs_dim, 0.0);
    f[goal_.task_id] = 1.0;
    f[spec_.total_tasks() + (next_step - 1)] = 1.0;
    return f;
  }
};

// ---------------------------------------------------------------------------
// CombinationLock: a hidden sequence of H outcomes must be reproduced. Each
// step the first remainder token selects one of num_strategies outcomes
// (many detail tokens collapse onto each outcome); the second token is free
// detail. Feedback is the length of the matched prefix so far.
// ---------------------------------------------------------------------------
class CombinationLockEnv : public Env {
 public:
  struct Params {
    int horizon = 3;          // H
    int num_strategies = 8;   // M_s
    int vocab = 16;
    int train_tasks = 32;
    int test_tasks = 16;
  };

  CombinationLockEnv() { init(Params()); }
  explicit CombinationLockEnv(const Params& p) { init(p); }

  void init(const Params& p) {
    p_ = p;
    spec_.name = "combination_lock";
    spec_.vocab = p.vocab;
    spec_.strategy_len = 1;
    spec_.remainder_len = 2;
    spec_.horizon = p.horizon;
    spec_.train_tasks = p.train_tasks;
    spec_.test_tasks = p.test_tasks;
    // task one-hot + step one-hot + matched-prefix one-hot
    spec_.obs_dim = spec_.total_tasks() + p.horizon + (p.horizon + 1);
  }

  int combination_digit(int task_id, int step) const {
    int c = static_cast<int>(hash_mix(task_id * 31 + 7, step) %
                             static_cast<uint64_t>(p_.num_strategies));
    if (c == intent_of_token(designated_strategy_token(step)))
      c = (c + 1) % p_.num_strategies;
    return c;
  }

  Observation reset(const Goal& goal, uint64_t seed) override {
    check_goal(goal);
    goal_ = goal;
    seed_ = seed;
    step_ = 0;
    prefix_ = 0;
    broken_ = false;
    active_ = true;
    done_ = false;
    return make_obs();
  }

  OutcomeId outcome_class(const std::vector<int>& a) const override {
    check_action(a);
    return a[0] % p_.num_strategies;
  }

  StepOutcome step(const std::vector<int>& a) override {
    OutcomeId outcome = outcome_class(a);
    if (!broken_ && outcome == combination_digit(goal_.task_id, step_)) {
      ++prefix_;
    } else {
      broken_ = true;
    }
    ++step_;
    StepOutcome r;
    r.done = step_ >= p_.horizon;
    r.reward = (r.done && prefix_ == p_.horizon) ? 1.0 : 0.0;
    r.outcome = outcome;
    if (r.done) {
      active_ = false;
      done_ = true;
    }
    r.obs = make_obs();
    return r;
  }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<CombinationLockEnv>(p_);
  }

  int designated_strategy_token(int step) const override {
    return step % p_.vocab;
  }
  int intent_of_token(int tok) const override { return tok % p_.num_strategies; }
  std::vector<int> faithful_tokens(int intent, int position) const override {
    std::vector<int> out;
    if (position == 0) {
      for (int t = intent; t < p_.vocab; t += p_.num_strategies)
        out.push_back(t);
    }
    return out;
  }

 private:
  Observation make_obs() const {
    Observation o;
    o.step_index = std::min(step_ + 1, p_.horizon);
    o.features = obs_prefix(o.step_index);
    o.features[spec_.total_tasks() + p_.horizon + prefix_] = 1.0;
    o.raw_feedback = {prefix_};
    return o;
  }

  Params p_;
  int prefix_ = 0;
  bool broken_ = false;
};

// ---------------------------------------------------------------------------
// NoisyTap: a WxW grid with E square elements on the diagonal; the remainder
// tokens encode a coordinate and the outcome is the element containing it
// (or background). Many coordinates collapse onto one element, so noisy
// action sampling produces only superficial diversity.
// ---------------------------------------------------------------------------
class NoisyTapEnv : public Env {
 public:
  struct Params {
    int horizon = 3;   // H
    int width = 12;    // W
    int elements = 6;  // E, each a 2x2 block at (2k, 2k)
    int vocab = 16;
    int train_tasks = 32;
    int test_tasks = 16;
  };

  NoisyTapEnv() { init(Params()); }
  explicit NoisyTapEnv(const Params& p) { init(p); }

  void init(const Params& p) {
    p_ = p;
    spec_.name = "noisy_tap";
    spec_.vocab = p.vocab;
    spec_.strategy_len = 1;
    spec_.remainder_len = 2;
    spec_.horizon = p.horizon;
    spec_.train_tasks = p.train_tasks;
    spec_.test_tasks = p.test_tasks;
    // task one-hot + step one-hot + last outcome one-hot + first-wrong-step
    spec_.obs_dim = spec_.total_tasks() + p.horizon + (p.elements + 1) +
                    (p.horizon + 1);
  }

  int correct_element(int task_id, int step) const {
    int e = static_cast<int>(hash_mix(task_id * 37 + 11, step) %
                             static_cast<uint64_t>(p_.elements));
    int d = intent_of_token(designated_strategy_token(step));
    if (e == d) e = (e + 1) % p_.elements;
    return e;
  }

  Observation reset(const Goal& goal, uint64_t seed) override {
    check_goal(goal);
    goal_ = goal;
    seed_ = seed;
    step_ = 0;
    first_wrong_ = 0;  // 0 = none
    last_outcome_ = -1;
    active_ = true;
    done_ = false;
    return make_obs();
  }

  OutcomeId outcome_class(const std::vector<int>& a) const override {
    check_action(a);
    int x = a[0] % p_.width;
    int y = a[1] % p_.width;
    if (x / 2 == y / 2 && x / 2 < p_.elements) return x / 2;
    return p_.elements;  // background
  }

  StepOutcome step(const std::vector<int>& a) override {
    OutcomeId outcome = outcome_class(a);
    if (outcome != correct_element(goal_.task_id, step_) && first_wrong_ == 0)
      first_wrong_ = step_ + 1;
    last_outcome_ = static_cast<int>(outcome);
    ++step_;
    StepOutcome r;
    r.done = step_ >= p_.horizon;
    r.reward = (r.done && first_wrong_ == 0) ? 1.0 : 0.0;
    r.outcome = outcome;
    if (r.done) {
      active_ = false;
      done_ = true;
    }
    r.obs = make_obs();
    return r;
  }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<NoisyTapEnv>(p_);
  }

  int designated_strategy_token(int step) const override {
    return step % p_.vocab;
  }
  // Intents 0..E-1 target an element; higher intents have no target.
  int intent_of_token(int tok) const override { return tok % 8; }
  std::vector<int> faithful_tokens(int intent, int /*position*/) const override {
    std::vector<int> out;
    if (intent >= p_.elements) return out;
    for (int t = 0; t < p_.vocab; ++t)
      if ((t % p_.width) / 2 == intent) out.push_back(t);
    return out;
  }

 private:
  Observation make_obs() const {
    Observation o;
    o.step_index = std::min(step_ + 1, p_.horizon);
    o.features = obs_prefix(o.step_index);
    int base = spec_.total_tasks() + p_.horizon;
    if (last_outcome_ >= 0) o.features[base + last_outcome_] = 1.0;
    o.features[base + p_.elements + 1 + first_wrong_] = 1.0;
    o.raw_feedback = {first_wrong_};
    return o;
  }

  Params p_;
  int first_wrong_ = 0;
  int last_outcome_ = -1;
};

// ---------------------------------------------------------------------------
// FeedbackRepair: guess a hidden bit-string in two turns. After a wrong
// first attempt, the indices of up to F incorrect bits are revealed; the
// outcome class of an attempt is exactly that revealed set.
// ---------------------------------------------------------------------------
class FeedbackRepairEnv : public Env {
 public:
  struct Params {
    int bits = 10;      // L_b
    int max_reveal = 4;  // F
    int vocab = 16;
    int train_tasks = 32;
    int test_tasks = 16;
  };

  FeedbackRepairEnv() { init(Params()); }
  explicit FeedbackRepairEnv(const Params& p) { init(p); }

  void init(const Params& p) {
    p_ = p;
    spec_.name = "feedback_repair";
    spec_.vocab = p.vocab;
    spec_.strategy_len = 1;
    spec_.remainder_len = p.bits;
    spec_.horizon = 2;
    spec_.train_tasks = p.train_tasks;
    spec_.test_tasks = p.test_tasks;
    // task one-hot + step one-hot + no-feedback sentinel + wrong-index block
    spec_.obs_dim = spec_.total_tasks() + 2 + 1 + p.bits;
  }

  int target_bit(int task_id, int i) const {
    return static_cast<int>(hash_mix(task_id * 41 + 13, i) & 1);
  }

  Observation reset(const Goal& goal, uint64_t seed) override {
    check_goal(goal);
    goal_ = goal;
    seed_ = seed;
    step_ = 0;
    revealed_.clear();
    active_ = true;
    done_ = false;
    return make_obs();
  }

  OutcomeId outcome_class(const std::vector<int>& a) const override {
    check_action(a);
    OutcomeId mask = 0;
    int shown = 0;
    for (int i = 0; i < p_.bits && shown < p_.max_reveal; ++i) {
      if (a[i] % 2 != target_bit(goal_.task_id, i)) {
        mask |= (OutcomeId{1} << i);
        ++shown;
      }
    }
    return mask;
  }

  StepOutcome step(const std::vector<int>& a) override {
    OutcomeId outcome = outcome_class(a);
    ++step_;
    StepOutcome r;
    r.outcome = outcome;
    bool exact = outcome == 0;
    r.done = exact || step_ >= spec_.horizon;
    r.reward = (r.done && exact) ? 1.0 : 0.0;
    if (!r.done) {
      revealed_.clear();
      for (int i = 0; i < p_.bits; ++i)
        if (outcome & (OutcomeId{1} << i)) revealed_.push_back(i);
    }
    if (r.done) {
      active_ = false;
      done_ = true;
    }
    r.obs = make_obs();
    return r;
  }

  std::unique_ptr<Env> clone() const override {
    return std::make_unique<FeedbackRepairEnv>(p_);
  }

  int designated_strategy_token(int step) const override {
    return step % p_.vocab;
  }
  int intent_of_token(int tok) const override { return tok % 8; }
  std::vector<int> faithful_tokens(int, int) const override { return {}; }

 private:
  Observation make_obs() const {
    Observation o;
    o.step_index = std::min(step_ + 1, spec_.horizon);
    o.features = obs_prefix(o.step_index);
    int base = spec_.total_tasks() + 2;
    if (step_ == 0) {
      o.features[base] = 1.0;  // no feedback yet
    } else {
      for (int i : revealed_) o.features[base + 1 + i] = 1.0;
    }
    o.raw_feedback = revealed_;
    return o;
  }

  Params p_;
  std::vector<int> revealed_;
};

inline std::unique_ptr<Env> make_env(const std::string& name) {
  if (name == "combination_lock")
    return std::make_unique<CombinationLockEnv>();
  if (name == "noisy_tap") return std::make_unique<NoisyTapEnv>();
  if (name == "feedback_repair")
    return std::make_unique<FeedbackRepairEnv>();
  throw std::runtime_error("unknown environment: " + name);
}

}  // namespace sgelab
