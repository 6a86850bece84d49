#pragma once

#include <algorithm>
#include <atomic>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>
#include <thread>
#include <vector>

#include "sgelab/sge.hpp"

namespace sgelab {

struct BadArguments : std::invalid_argument {
  explicit BadArguments(const std::string& what) : std::invalid_argument(what) {}
};

// Unbiased estimator 1 - C(n-c, k)/C(n, k), evaluated as a stable product.
inline double pass_at_k(int n, int c, int k) {
  if (k < 1 || k > n) throw BadArguments("pass_at_k: need 1 <= k <= n");
  if (c < 0 || c > n) throw BadArguments("pass_at_k: need 0 <= c <= n");
  if (n - c < k) return 1.0;
  double prod = 1.0;
  for (int i = 0; i < k; ++i)
    prod *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - prod;
}

struct TaskEvalResult {
  int task_id = 0;
  int attempts = 0;   // n
  int successes = 0;  // c
};

struct EvalResult {
  Split split = Split::kTrain;
  uint64_t seed = 0;
  std::vector<TaskEvalResult> tasks;
  std::vector<int> ks;
  std::vector<double> pass_curve;  // mean over tasks, aligned with ks

  double mean_pass(int k) const {
    double sum = 0.0;
    for (const auto& t : tasks) sum += pass_at_k(t.attempts, t.successes, k);
    return tasks.empty() ? 0.0 : sum / static_cast<double>(tasks.size());
  }
};

inline std::vector<double> pass_curve(const std::vector<TaskEvalResult>& tasks,
                                      const std::vector<int>& ks) {
  std::vector<double> out;
  out.reserve(ks.size());
  for (int k : ks) {
    double sum = 0.0;
    for (const auto& t : tasks) sum += pass_at_k(t.attempts, t.successes, k);
    out.push_back(tasks.empty() ? 0.0 : sum / static_cast<double>(tasks.size()));
  }
  return out;
}

// Cumulative count of unique episode outcome-sequences, per task and on
// average. Feed trajectories in collection order.
class DistinctOutcomeTracker {
 public:
  void add(const Trajectory& traj) {
    std::vector<OutcomeId> seq;
    seq.reserve(traj.steps.size());
    for (const auto& s : traj.steps) seq.push_back(s.outcome);
    seen_[traj.goal.task_id].insert(std::move(seq));
  }

  int count(int task_id) const {
    auto it = seen_.find(task_id);
    return it == seen_.end() ? 0 : static_cast<int>(it->second.size());
  }

  double mean_count() const {
    if (seen_.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& [id, s] : seen_) sum += static_cast<double>(s.size());
    return sum / static_cast<double>(seen_.size());
  }

  double total_count() const {
    double sum = 0.0;
    for (const auto& [id, s] : seen_) sum += static_cast<double>(s.size());
    return sum;
  }

 private:
  std::map<int, std::set<std::vector<OutcomeId>>> seen_;
};

struct EvalOptions {
  double tau = 0.7;             // uniform temperature for all tokens
  bool mixed_temperature = false;  // restore tau_s for strategy tokens
  double tau_s = 1.2;
  std::vector<int> ks;  // defaults to powers of 2 up to n
};

// n independent seeded rollouts per task of the split: reflection off and a
// single temperature unless asked otherwise. Per-attempt seed is
// seed ^ task ^ attempt-derived, so results are order-independent and the
// attempts can be sharded across workers.
inline EvalResult evaluate(const PolicyParams& policy, const Env& env,
                           Split split, int attempts, uint64_t seed,
                           const EvalOptions& opt = {}) {
  if (attempts < 1) throw BadArguments("evaluate: attempts must be >= 1");
  EvalResult result;
  result.split = split;
  result.seed = seed;
  std::vector<Goal> goals = env.tasks(split);
  result.tasks.resize(goals.size());

  RolloutOptions ropt;
  ropt.tau = opt.tau;
  ropt.tau_s = opt.mixed_temperature ? opt.tau_s : opt.tau;
  ropt.p_B = 0.0;
  ropt.p_G = 0.0;
  StrategyBuffers no_buffers(1);

  auto run_task = [&](size_t idx) {
    Goal goal = goals[idx];
    int task = goal.task_id;
    auto instance = env.clone();
    int c = 0;
    for (int a = 0; a < attempts; ++a) {
      uint64_t attempt_seed = hash_mix(seed ^ static_cast<uint64_t>(task),
                                       static_cast<uint64_t>(a) + 1);
      Rng rng(attempt_seed);
      Trajectory traj = rollout_episode(policy, *instance, goal, attempt_seed,
                                        ropt, no_buffers, rng, std::nullopt);
      if (traj.terminal_reward == 1.0) ++c;
    }
    result.tasks[idx] = TaskEvalResult{task, attempts, c};
  };

  int workers = std::min<int>(worker_count(), static_cast<int>(goals.size()));
  if (workers <= 1) {
    for (size_t i = 0; i < goals.size(); ++i) run_task(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (size_t i = next.fetch_add(1); i < goals.size();
             i = next.fetch_add(1))
          run_task(i);
      });
    for (auto& th : pool) th.join();
  }

  result.ks = opt.ks;
  if (result.ks.empty())
    for (int k = 1; k <= attempts; k *= 2) result.ks.push_back(k);
  for (int k : result.ks)
    if (k > attempts) throw BadArguments("evaluate: k exceeds attempt count");
  result.pass_curve = pass_curve(result.tasks, result.ks);
  return result;
}

// CSV: task_id, n, c, pass@k..., split
inline void write_eval_csv(std::ostream& os, const EvalResult& r) {
  os << "task_id,n,c";
  for (int k : r.ks) os << ",pass@" << k;
  os << ",split\n";
  for (const auto& t : r.tasks) {
    os << t.task_id << ',' << t.attempts << ',' << t.successes;
    for (int k : r.ks)
      os << ',' << format_real(pass_at_k(t.attempts, t.successes, k));
    os << ',' << split_name(r.split) << '\n';
  }
}

inline void write_eval_summary_json(std::ostream& os, const EvalResult& r) {
  os << "{\"split\":\"" << split_name(r.split) << "\",\"seed\":" << r.seed
     << ",\"tasks\":" << r.tasks.size() << ",\"attempts\":"
     << (r.tasks.empty() ? 0 : r.tasks[0].attempts) << ",\"pass\":{";
  for (size_t i = 0; i < r.ks.size(); ++i) {
    if (i) os << ',';
    os << "\"" << r.ks[i] << "\":" << format_real(r.pass_curve[i]);
  }
  os << "}}\n";
}

}  // namespace sgelab
