#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgelab/eval.hpp"
#include "sgelab/train.hpp"
#include "sgelab/xenv.hpp"

namespace sgelab {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};
struct CheckpointMismatch : std::runtime_error {
  explicit CheckpointMismatch(const std::string& what)
      : std::runtime_error(what) {}
};

struct RunConfig {
  // [env]
  std::string env_name = "combination_lock";
  std::string env_address;  // "host:port" switches to the remote client

  // [policy]
  int hidden = 0;  // 0 = linear heads
  bool concentrated = true;
  double beta = 3.25;   // strategy-logit concentration
  double gamma = 3.0;   // intent-faithful remainder weight
  uint64_t init_seed = 0;

  // [train]
  TrainerConfig trainer;

  // [sge]
  double tau = 0.7;
  double tau_s = 1.2;
  int buffer_capacity = 32;
  double p_B = 0.25;
  double p_G = 0.1;
  bool per_step_reflection = false;
  bool sge_section_present = false;

  // [run]
  int updates = 100;  // N
  int eval_every = 50;
  int eval_attempts = 64;
  std::vector<int> eval_ks;  // empty = powers of 2 up to attempts
  std::vector<uint64_t> seeds = {1};
  std::string out_dir = "out";
  bool write_trajectories = false;

  void validate() const {
    trainer.validate();
    if (env_name != "combination_lock" && env_name != "noisy_tap" &&
        env_name != "feedback_repair")
      throw ConfigError("unknown env: " + env_name);
    if (tau <= 0.0 || tau_s <= 0.0) throw ConfigError("temperatures must be > 0");
    if (p_B < 0.0 || p_B > 1.0 || p_G < 0.0 || p_G > 1.0)
      throw ConfigError("reflection probabilities must be in [0,1]");
    if (buffer_capacity < 1) throw ConfigError("buffer_capacity must be >= 1");
    if (updates < 0) throw ConfigError("updates must be >= 0");
    if (eval_attempts < 1) throw ConfigError("eval_attempts must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (seeds.empty()) throw ConfigError("need at least one seed");
    for (int k : eval_ks)
      if (k < 1 || k > eval_attempts)
        throw ConfigError("eval k out of range: " + std::to_string(k));
    if (hidden < 0) throw ConfigError("hidden must be >= 0");
  }
};

namespace detail {

inline void reject_unknown(const nlohmann::json& section,
                           const std::string& name,
                           const std::set<std::string>& known) {
  for (auto it = section.begin(); it != section.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key in [" + name + "]: " + it.key());
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

// Flat sections: env, policy, train, sge, run. Unknown sections or keys are
// rejected up front.
inline RunConfig parse_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config root must be an object");
  RunConfig c;
  detail::reject_unknown(j, "root", {"env", "policy", "train", "sge", "run"});

  if (j.contains("env")) {
    const auto& s = j.at("env");
    detail::reject_unknown(s, "env", {"name", "address"});
    detail::maybe(s, "name", c.env_name);
    detail::maybe(s, "address", c.env_address);
  }
  if (j.contains("policy")) {
    const auto& s = j.at("policy");
    detail::reject_unknown(s, "policy",
                           {"hidden", "concentrated", "beta", "gamma", "seed"});
    detail::maybe(s, "hidden", c.hidden);
    detail::maybe(s, "concentrated", c.concentrated);
    detail::maybe(s, "beta", c.beta);
    detail::maybe(s, "gamma", c.gamma);
    detail::maybe(s, "seed", c.init_seed);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    detail::reject_unknown(
        s, "train",
        {"method", "learning_rate", "group_size", "clip_eps", "epochs",
         "tasks_per_update", "entropy_alpha", "entropy_kappa", "rnd_latent",
         "rnd_hidden", "rnd_lr", "rlad_kl_coeff", "rlad_dropout"});
    if (s.contains("method"))
      c.trainer.method = parse_method(s.at("method").get<std::string>());
    detail::maybe(s, "learning_rate", c.trainer.learning_rate);
    detail::maybe(s, "group_size", c.trainer.group_size);
    detail::maybe(s, "clip_eps", c.trainer.clip_eps);
    detail::maybe(s, "epochs", c.trainer.epochs);
    detail::maybe(s, "tasks_per_update", c.trainer.tasks_per_update);
    detail::maybe(s, "entropy_alpha", c.trainer.entropy_alpha);
    detail::maybe(s, "entropy_kappa", c.trainer.entropy_kappa);
    detail::maybe(s, "rnd_latent", c.trainer.rnd_latent);
    detail::maybe(s, "rnd_hidden", c.trainer.rnd_hidden);
    detail::maybe(s, "rnd_lr", c.trainer.rnd_lr);
    detail::maybe(s, "rlad_kl_coeff", c.trainer.rlad_kl_coeff);
    detail::maybe(s, "rlad_dropout", c.trainer.rlad_dropout);
  }
  if (j.contains("sge")) {
    const auto& s = j.at("sge");
    detail::reject_unknown(s, "sge",
                           {"tau", "tau_s", "buffer_capacity", "p_B", "p_G",
                            "per_step_reflection"});
    c.sge_section_present = !s.empty();
    detail::maybe(s, "tau", c.tau);
    detail::maybe(s, "tau_s", c.tau_s);
    detail::maybe(s, "buffer_capacity", c.buffer_capacity);
    detail::maybe(s, "p_B", c.p_B);
    detail::maybe(s, "p_G", c.p_G);
    detail::maybe(s, "per_step_reflection", c.per_step_reflection);
  }
  if (j.contains("run")) {
    const auto& s = j.at("run");
    detail::reject_unknown(s, "run",
                           {"updates", "eval_every", "eval_attempts", "eval_ks",
                            "seeds", "out_dir", "write_trajectories"});
    detail::maybe(s, "updates", c.updates);
    detail::maybe(s, "eval_every", c.eval_every);
    detail::maybe(s, "eval_attempts", c.eval_attempts);
    detail::maybe(s, "eval_ks", c.eval_ks);
    detail::maybe(s, "seeds", c.seeds);
    detail::maybe(s, "out_dir", c.out_dir);
    detail::maybe(s, "write_trajectories", c.write_trajectories);
  }
  c.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  return parse_config(j);
}

// Local simulator or remote client, depending on the config.
inline std::unique_ptr<Env> make_run_env(const RunConfig& c) {
  if (c.env_address.empty()) return make_env(c.env_name);
  size_t colon = c.env_address.rfind(':');
  if (colon == std::string::npos)
    throw ConfigError("env address must be host:port");
  return connect_env(c.env_address.substr(0, colon),
                     std::stoi(c.env_address.substr(colon + 1)));
}

// Base policy for a run: Normal(0, 0.02) init plus, when enabled, the
// concentration bias toward one wrong strategy token per step and the
// intent-faithful remainder weights. Concentration needs the local
// environment's structure hooks, so it always consults the local simulator
// even when rollouts go over the wire.
inline PolicyParams make_base_policy(const RunConfig& c, const EnvSpec& spec) {
  PolicyParams p = init_policy(spec, c.hidden, c.init_seed);
  if (c.concentrated) {
    if (c.hidden != 0)
      throw ConfigError("concentrated init requires linear heads");
    std::unique_ptr<Env> local = make_env(spec.name);
    apply_concentration(p, *local, c.beta, c.gamma);
  }
  return p;
}

inline RolloutOptions rollout_options(const RunConfig& c) {
  RolloutOptions opt;
  opt.group_size = c.trainer.group_size;
  opt.tau = c.tau;
  if (c.trainer.method == Method::kSge) {
    opt.tau_s = c.tau_s;
    opt.p_B = c.p_B;
    opt.p_G = c.p_G;
    opt.per_step_reflection = c.per_step_reflection;
  } else {
    // baselines sample at a single temperature with no reflection
    opt.tau_s = c.tau;
    opt.p_B = 0.0;
    opt.p_G = 0.0;
  }
  if (c.trainer.method == Method::kRlad)
    opt.rlad_dropout = c.trainer.rlad_dropout;
  return opt;
}

struct UpdateRow {
  int update_index = 0;
  std::string method;
  double train_pass1 = 0.0;
  double loss = 0.0;
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;
  double distinct_outcomes_cum = 0.0;
};

inline void write_stats_header(std::ostream& os) {
  os << "update_index,method,train_pass1,loss,mean_entropy,clip_fraction,"
        "distinct_outcomes_cum\n";
}

inline void write_stats_row(std::ostream& os, const UpdateRow& r) {
  os << r.update_index << ',' << r.method << ',' << format_real(r.train_pass1)
     << ',' << format_real(r.loss) << ',' << format_real(r.mean_entropy) << ','
     << format_real(r.clip_fraction) << ','
     << format_real(r.distinct_outcomes_cum) << '\n';
}

struct SeedRunResult {
  uint64_t seed = 0;
  EvalResult final_train;
  EvalResult final_test;
  double distinct_outcomes_cum = 0.0;
  std::string checkpoint_path;
};

// One seed of the training loop: N iterations of collect -> filter -> update
// with periodic evaluation, everything derived from (config, seed).
inline SeedRunResult run_train_seed(const RunConfig& c, uint64_t seed,
                                    std::ostream* log = nullptr) {
  std::unique_ptr<Env> env = make_run_env(c);
  const EnvSpec& spec = env->spec();
  PolicyParams policy = make_base_policy(c, spec);

  TrainerState state;
  init_trainer_state(state, c.trainer, policy, seed);
  StrategyBuffers buffers(c.buffer_capacity);
  DistinctOutcomeTracker outcomes;
  Rng rng(hash_mix(seed, 0x5eed));

  namespace fs = std::filesystem;
  fs::create_directories(c.out_dir);
  std::string tag = "_" + std::string(method_name(c.trainer.method)) + "_seed" +
                    std::to_string(seed);
  std::ofstream stats(fs::path(c.out_dir) / ("stats" + tag + ".csv"),
                      std::ios::binary);
  write_stats_header(stats);
  std::ofstream traj_out;
  if (c.write_trajectories)
    traj_out.open(fs::path(c.out_dir) / ("trajectories" + tag + ".jsonl"),
                  std::ios::binary);

  if (c.trainer.method != Method::kSge && c.sge_section_present && log)
    *log << "note: method is " << method_name(c.trainer.method)
         << "; sge section constants are ignored\n";

  EvalOptions eopt;
  eopt.tau = c.tau;
  eopt.ks = c.eval_ks;
  auto run_eval_pair = [&](int update_index) {
    for (Split split : {Split::kTrain, Split::kTest}) {
      EvalResult r = evaluate(policy, *env, split, c.eval_attempts,
                              hash_mix(seed, 0xe7a1), eopt);
      std::ofstream out(fs::path(c.out_dir) /
                            ("eval_" + std::string(split_name(split)) + tag +
                             "_u" + std::to_string(update_index) + ".csv"),
                        std::ios::binary);
      write_eval_csv(out, r);
    }
  };

  RolloutOptions ropt = rollout_options(c);
  std::vector<Goal> train_goals = env->tasks(Split::kTrain);

  run_eval_pair(0);
  for (int update = 1; update <= c.updates; ++update) {
    ropt.origin_update = update;
    std::vector<Group> groups;
    int episodes = 0, successes = 0;
    for (int t = 0; t < c.trainer.tasks_per_update; ++t) {
      const Goal& goal = train_goals[rng.next_below(train_goals.size())];
      Group g = collect_group(policy, *env, goal, ropt, buffers, rng);
      for (const auto& traj : g.trajectories) {
        validate_trajectory(traj, spec);
        outcomes.add(traj);
        ++episodes;
        if (traj.terminal_reward == 1.0) ++successes;
        if (traj_out) write_trajectory_record(traj_out, traj);
      }
      groups.push_back(std::move(g));
    }

    UpdateRow row;
    row.update_index = update;
    row.method = method_name(c.trainer.method);
    row.train_pass1 =
        episodes ? static_cast<double>(successes) / episodes : 0.0;
    row.distinct_outcomes_cum = outcomes.mean_count();

    std::vector<Group> kept = dynamic_filter(std::move(groups));
    UpdateStats us;
    try {
      us = update_step(policy, kept, c.trainer, state);
    } catch (NonFiniteLoss&) {
      throw NonFiniteLoss(update);
    }
    if (us.skipped && log)
      *log << "update " << update << ": all groups degenerate, skipped\n";
    row.loss = us.loss;
    row.mean_entropy = us.mean_entropy;
    row.clip_fraction = us.clip_fraction;
    write_stats_row(stats, row);

    if (update % c.eval_every == 0 && update != c.updates)
      run_eval_pair(update);
  }
  run_eval_pair(c.updates);

  SeedRunResult result;
  result.seed = seed;
  result.final_train =
      evaluate(policy, *env, Split::kTrain, c.eval_attempts,
               hash_mix(seed, 0xe7a1), eopt);
  result.final_test = evaluate(policy, *env, Split::kTest, c.eval_attempts,
                               hash_mix(seed, 0xe7a1), eopt);
  result.distinct_outcomes_cum = outcomes.mean_count();
  result.checkpoint_path =
      (fs::path(c.out_dir) / ("checkpoint" + tag + ".bin")).string();
  save_policy(policy, result.checkpoint_path);
  return result;
}

inline std::vector<SeedRunResult> run_train(const RunConfig& c,
                                            std::ostream* log = nullptr) {
  c.validate();
  std::vector<SeedRunResult> results;
  for (uint64_t seed : c.seeds) results.push_back(run_train_seed(c, seed, log));
  return results;
}

// Evaluate a saved checkpoint. Validation (dimensions, requested ks) happens
// before any rollout.
inline std::vector<EvalResult> run_eval(const RunConfig& c,
                                        const std::string& checkpoint) {
  c.validate();
  PolicyParams policy = load_policy(checkpoint);
  std::unique_ptr<Env> env = make_run_env(c);
  const EnvSpec& spec = env->spec();
  if (policy.dims.vocab != spec.vocab || policy.dims.obs_dim != spec.obs_dim ||
      policy.dims.horizon != spec.horizon ||
      policy.dims.strategy_len != spec.strategy_len ||
      policy.dims.remainder_len != spec.remainder_len)
    throw CheckpointMismatch("checkpoint dimensions do not match " +
                             spec.name);
  for (int k : c.eval_ks)
    if (k > c.eval_attempts)
      throw BadArguments("requested k exceeds attempt count");

  EvalOptions eopt;
  eopt.tau = c.tau;
  eopt.ks = c.eval_ks;
  std::vector<EvalResult> out;
  namespace fs = std::filesystem;
  fs::create_directories(c.out_dir);
  for (Split split : {Split::kTrain, Split::kTest}) {
    uint64_t seed = c.seeds[0];
    EvalResult r = evaluate(policy, *env, split, c.eval_attempts,
                            hash_mix(seed, 0xe7a1), eopt);
    std::ofstream csv(fs::path(c.out_dir) / ("eval_" +
                          std::string(split_name(split)) + ".csv"),
                      std::ios::binary);
    write_eval_csv(csv, r);
    std::ofstream js(fs::path(c.out_dir) / ("eval_" +
                         std::string(split_name(split)) + ".json"),
                     std::ios::binary);
    write_eval_summary_json(js, r);
    out.push_back(std::move(r));
  }
  return out;
}

// Measures the concentration strength that makes the base policy's train
// pass rates land under the given ceilings. Scans the grid from weakest to
// strongest and returns the first bias that satisfies both; throws if none
// does.
inline double calibrate_beta(const std::string& env_name, double gamma,
                             double max_pass_many, double max_pass_one,
                             int attempts, uint64_t seed,
                             double* measured_pass_many = nullptr) {
  std::unique_ptr<Env> env = make_env(env_name);
  for (double beta = 2.0; beta <= 6.0 + 1e-9; beta += 0.25) {
    PolicyParams p = init_policy(env->spec(), 0, 0);
    apply_concentration(p, *env, beta, gamma);
    EvalOptions eopt;
    EvalResult r = evaluate(p, *env, Split::kTrain, attempts, seed, eopt);
    double pass_many = r.mean_pass(std::min(attempts, 256));
    double pass_one = r.mean_pass(1);
    if (pass_many <= max_pass_many && pass_one <= max_pass_one) {
      if (measured_pass_many) *measured_pass_many = pass_many;
      return beta;
    }
  }
  throw ConfigError("no concentration bias in [2,6] meets the pass ceilings");
}

}  // namespace sgelab
