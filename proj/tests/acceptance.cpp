// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails. Everything is seeded, so repeated
// runs produce identical verdicts.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "helpers.hpp"
#include "sgelab/config.hpp"

using namespace sgelab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// One-sided z critical value for p < 0.05.
constexpr double kZ05 = 1.6449;
// Chi-squared critical value, 15 dof, p = 0.001.
constexpr double kChi2Crit15 = 37.697;

struct Outcome {
  bool ok = true;
  std::string detail;
};

struct Check {
  Outcome out;
  void require(bool cond, const std::string& what) {
    if (!cond) {
      out.ok = false;
      if (!out.detail.empty()) out.detail += "; ";
      out.detail += what;
    }
  }
  void note(const std::string& what) {
    if (!out.detail.empty()) out.detail += "; ";
    out.detail += what;
  }
};

std::string fmt(double v) { return format_real(v); }

CombinationLockEnv::Params easy_lock_params() {
  CombinationLockEnv::Params p;
  p.horizon = 1;
  p.num_strategies = 4;
  return p;
}

// Collects a group whose rewards are not all equal.
Group mixed_reward_group(const PolicyParams& p, CombinationLockEnv& env,
                         StrategyBuffers& bufs, Rng& rng, int group_size) {
  RolloutOptions opt;
  opt.group_size = group_size;
  for (int attempt = 0; attempt < 500; ++attempt) {
    Group g = collect_group(p, env, Goal{static_cast<int>(rng.next_below(32)),
                                         Split::kTrain},
                            opt, bufs, rng);
    if (!dynamic_filter({g}).empty()) return g;
  }
  throw std::runtime_error("no mixed-reward group found");
}

std::vector<std::vector<double>> broadcast(const Group& g,
                                           const std::vector<double>& adv) {
  std::vector<std::vector<double>> out;
  for (size_t i = 0; i < g.trajectories.size(); ++i) {
    std::vector<double> row;
    for (const auto& s : g.trajectories[i].steps)
      row.insert(row.end(), s.strategy.size() + s.remainder.size(), adv[i]);
    out.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients match central finite differences.
// ---------------------------------------------------------------------------
Outcome criterion_gradients() {
  Check c;
  double worst = 0.0;
  const int instances = 100;
  for (int i = 0; i < instances; ++i) {
    int hidden = (i % 2) ? 4 : 0;
    PolicyParams p = testutil::small_policy(hidden, 1000 + i);
    Rng rng(hash_mix(7, i));
    std::vector<Trajectory> trajs;
    std::vector<const Trajectory*> batch;
    std::vector<std::vector<double>> token_adv;
    for (int t = 0; t < 2; ++t) {
      trajs.push_back(testutil::random_trajectory(
          p, rng, p.dims.horizon, 0.7, 1.2, i % 3 == 0, i % 5 == 0));
    }
    for (const auto& t : trajs) {
      batch.push_back(&t);
      std::vector<double> row;
      for (const auto& s : t.steps)
        for (size_t k = 0; k < s.strategy.size() + s.remainder.size(); ++k)
          row.push_back(2.0 * rng.next_double() - 1.0);
      token_adv.push_back(std::move(row));
    }
    PolicyParams ref = p;
    for (double& v : p.theta) v += 0.01 * rng.next_normal();
    const PolicyParams* refp = (i % 2) ? &ref : nullptr;
    double kl = refp ? 0.05 : 0.0;

    std::vector<double> grad(p.theta.size(), 0.0);
    batch_loss_and_grad(p, batch, token_adv, 0.2, refp, kl, &grad);
    auto scalar = [&]() {
      return batch_loss_and_grad(p, batch, token_adv, 0.2, refp, kl, nullptr)
          .loss;
    };
    std::vector<double> fd = testutil::fd_gradient(p, scalar, 1e-5);
    worst = std::max(worst, testutil::max_rel_err(grad, fd));
  }
  c.require(worst <= 1e-4, "max rel err " + fmt(worst) + " > 1e-4");
  c.note("100 instances, max rel err " + fmt(worst));
  return c.out;
}

// ---------------------------------------------------------------------------
// 2. First-epoch importance ratios are exactly 1.
// ---------------------------------------------------------------------------
Outcome criterion_ratios() {
  Check c;
  CombinationLockEnv env(easy_lock_params());
  double worst = 0.0;
  long tokens = 0;
  for (bool mixed : {false, true}) {
    PolicyParams p = init_policy(env.spec(), 0, 41);
    apply_concentration(p, env, 0.5, 2.5);
    StrategyBuffers bufs(8);
    Rng rng(19);
    RolloutOptions opt;
    opt.group_size = 8;
    if (!mixed) opt.tau_s = opt.tau;
    for (int rep = 0; rep < 5; ++rep) {
      Group g = collect_group(p, env, Goal{rep, Split::kTrain}, opt, bufs, rng);
      std::vector<double> lg, lp;
      for (const auto& traj : g.trajectories) {
        detail::for_each_token(p, traj, [&](Head h, std::span<const double> x,
                                            const TokenEvent& ev) {
          p.logits(h, x, lg);
          log_softmax(lg, ev.temperature, lp);
          worst = std::max(worst,
                           std::abs(std::exp(lp[ev.token] - ev.logprob) - 1.0));
          ++tokens;
        });
      }
      // the trainer's own first-epoch statistic agrees
      TrainerConfig cfg;
      TrainerState state;
      init_trainer_state(state, cfg, p, 1);
      PolicyParams copy = p;
      UpdateStats stats = update_step(copy, {g}, cfg, state);
      worst = std::max(worst, std::abs(stats.mean_ratio - 1.0));
    }
  }
  c.require(worst <= 1e-9, "ratio deviation " + fmt(worst) + " > 1e-9");
  c.note(std::to_string(tokens) + " tokens (uniform and mixed), max |ratio-1| " +
         fmt(worst));
  return c.out;
}

// ---------------------------------------------------------------------------
// 3. Sampler matches softmax(logits/tau) under a chi-squared test.
// ---------------------------------------------------------------------------
Outcome criterion_sampler() {
  Check c;
  Rng init(3);
  std::vector<double> logits(16);
  for (double& v : logits) v = init.next_normal();
  const int draws = 100000;
  for (double tau : {0.7, 1.0, 1.2}) {
    std::vector<double> lp;
    log_softmax(logits, tau, lp);
    std::vector<long> count(16, 0);
    Rng rng(hash_mix(11, static_cast<uint64_t>(tau * 1000)));
    for (int i = 0; i < draws; ++i)
      count[sample_token(logits, tau, rng, Segment::kRemainder).token]++;
    double chi2 = 0.0;
    for (int v = 0; v < 16; ++v) {
      double expect = draws * std::exp(lp[v]);
      chi2 += (count[v] - expect) * (count[v] - expect) / expect;
    }
    c.require(chi2 < kChi2Crit15,
              "tau " + fmt(tau) + " chi2 " + fmt(chi2) + " >= 37.697");
    c.note("tau " + fmt(tau) + " chi2 " + fmt(chi2));
  }
  return c.out;
}

// ---------------------------------------------------------------------------
// 4. pass@k equals exhaustive subset enumeration; monotone in k and c.
// ---------------------------------------------------------------------------
Outcome criterion_pass_at_k() {
  Check c;
  double worst = 0.0;
  for (int n = 1; n <= 8; ++n)
    for (int cc = 0; cc <= n; ++cc)
      for (int k = 1; k <= n; ++k) {
        int total = 0, hit = 0;
        for (int mask = 0; mask < (1 << n); ++mask) {
          if (__builtin_popcount(mask) != k) continue;
          ++total;
          if (mask & ((1 << cc) - 1)) ++hit;
        }
        double oracle = static_cast<double>(hit) / total;
        worst = std::max(worst, std::abs(pass_at_k(n, cc, k) - oracle));
      }
  c.require(worst <= 1e-12, "enumeration mismatch " + fmt(worst));

  Rng rng(3);
  int violations = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    int n = 1 + static_cast<int>(rng.next_below(64));
    int cc = static_cast<int>(rng.next_below(n + 1));
    int k = 1 + static_cast<int>(rng.next_below(n));
    double v = pass_at_k(n, cc, k);
    if (v < -1e-15 || v > 1.0 + 1e-15) ++violations;
    if (k + 1 <= n && pass_at_k(n, cc, k + 1) < v - 1e-15) ++violations;
    if (cc + 1 <= n && pass_at_k(n, cc + 1, k) < v - 1e-15) ++violations;
  }
  c.require(violations == 0,
            std::to_string(violations) + " monotonicity violations");
  c.note("n<=8 exhaustive exact, 2000 monotonicity samples");
  return c.out;
}

// ---------------------------------------------------------------------------
// 5. Entropy-shaped advantages stay sign-consistent and bounded.
// ---------------------------------------------------------------------------
Outcome criterion_entropy_shaping() {
  Check c;
  c.require(std::abs(entropy_adv_shape(0.5, 1.0, 0.4, 2.0) - 0.75) <= 1e-12,
            "example 1");
  c.require(std::abs(entropy_adv_shape(-0.5, 2.0, 0.4, 2.0) + 0.25) <= 1e-12,
            "example 2");
  c.require(entropy_adv_shape(0.0, 3.0, 0.4, 2.0) == 0.0, "example 3");

  Rng rng(21);
  int violations = 0;
  for (int i = 0; i < 100000; ++i) {
    double a = 4.0 * rng.next_double() - 2.0;
    double h = 3.0 * rng.next_double();
    double shaped = entropy_adv_shape(a, h, 0.4, 2.0);
    if (std::abs(shaped - a) > std::abs(a) / 2.0 + 1e-12) ++violations;
    if (shaped * a < 0.0) ++violations;
  }
  c.require(violations == 0, std::to_string(violations) + " bound violations");
  c.note("3 worked examples, 1e5 random (A,H) pairs");
  return c.out;
}

// ---------------------------------------------------------------------------
// 6. Novelty-bonus contracts: frozen target, reward-0 gating, learnability.
// ---------------------------------------------------------------------------
Outcome criterion_novelty() {
  Check c;

  // frozen target through direct updates and through the full update step
  {
    RndPair pair = RndPair::init(8, 16, 4, 3);
    std::vector<double> target = pair.target;
    Rng rng(5);
    for (int u = 0; u < 50; ++u) {
      std::vector<std::vector<double>> batch(2, std::vector<double>(8));
      for (auto& x : batch)
        for (double& v : x) v = rng.next_normal();
      rnd_update(pair, batch, 1e-3);
    }
    c.require(pair.target == target, "target drifted under direct updates");
  }
  CombinationLockEnv env(easy_lock_params());
  PolicyParams p = init_policy(env.spec(), 0, 51);
  apply_concentration(p, env, 0.5, 2.5);
  TrainerConfig cfg;
  cfg.method = Method::kRnd;
  {
    TrainerState state;
    init_trainer_state(state, cfg, p, 1);
    std::vector<double> target = state.rnd->target;
    StrategyBuffers bufs(8);
    Rng rng(29);
    PolicyParams copy = p;
    for (int u = 0; u < 3; ++u)
      update_step(copy, {mixed_reward_group(copy, env, bufs, rng, 8)}, cfg,
                  state);
    c.require(state.rnd->target == target, "target drifted in update step");
  }

  // gating: the update step equals a mirror that adds the bonus only to
  // reward-0 trajectories, and differs from one that bonuses everything
  {
    StrategyBuffers bufs(8);
    Rng rng(33);
    Group g = mixed_reward_group(p, env, bufs, rng, 8);
    TrainerState state;
    init_trainer_state(state, cfg, p, 2);
    // warm the error statistics so bonuses are nonzero
    std::vector<std::vector<double>> warm;
    for (int i = 0; i < 4; ++i) {
      warm.emplace_back(state.rnd->in_dim);
      for (double& v : warm.back()) v = rng.next_normal();
    }
    rnd_update(*state.rnd, warm, 1e-3);

    auto mirror = [&](bool gated) {
      TrainerState st = state;
      PolicyParams pol = p;
      std::vector<double> rewards = group_rewards(g);
      for (size_t i = 0; i < rewards.size(); ++i)
        if (!gated || rewards[i] == 0.0)
          rewards[i] +=
              rnd_reward(*st.rnd, rnd_encoding(pol.dims, g.trajectories[i]));
      std::vector<double> adv = grpo_advantages(rewards);
      std::vector<const Trajectory*> batch;
      for (const auto& t : g.trajectories) batch.push_back(&t);
      std::vector<std::vector<double>> encodings;
      for (const Trajectory* t : batch)
        encodings.push_back(rnd_encoding(pol.dims, *t));
      rnd_update(*st.rnd, encodings, cfg.rnd_lr);
      auto token_adv = broadcast(g, adv);
      std::vector<double> grad(pol.theta.size());
      for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::fill(grad.begin(), grad.end(), 0.0);
        batch_loss_and_grad(pol, batch, token_adv, cfg.clip_eps, nullptr, 0.0,
                            &grad);
        bool zero = true;
        for (double v : grad)
          if (v != 0.0) zero = false;
        if (!zero) st.adam.step(pol.theta, grad);
      }
      return pol.theta;
    };
    std::vector<double> gated = mirror(true);
    std::vector<double> ungated = mirror(false);
    TrainerState st = state;
    PolicyParams pol = p;
    update_step(pol, {g}, cfg, st);
    c.require(pol.theta == gated, "update step disagrees with gated bonus");
    c.require(gated != ungated, "gating indistinguishable from no gating");
  }

  // a repeatedly-trained input becomes less novel than a fresh one
  int wins = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    RndPair pair = RndPair::init(8, 16, 4, seed);
    Rng rng(hash_mix(seed, 77));
    std::vector<double> x(8), y(8);
    for (double& v : x) v = rng.next_normal();
    for (double& v : y) v = rng.next_normal();
    for (int u = 0; u < 100; ++u) rnd_update(pair, {x}, 1e-3);
    if (rnd_reward(pair, x) < rnd_reward(pair, y)) ++wins;
  }
  c.require(wins >= 95, "trained input less novel in only " +
                            std::to_string(wins) + "/100 trials");
  c.note("frozen target, gated bonus, " + std::to_string(wins) +
         "/100 novelty-decay trials");
  return c.out;
}

// ---------------------------------------------------------------------------
// 7. Buffer FIFO, reflection draw frequencies, success/failure routing.
// ---------------------------------------------------------------------------
Outcome criterion_buffers() {
  Check c;

  // FIFO eviction order is exact
  {
    StrategyBuffer buf(2);
    for (int marker : {10, 11, 12}) {
      StrategyRecord r;
      r.task_id = 0;
      r.origin_update = marker;
      buf.push(r);
    }
    const auto& q = buf.entries(0);
    c.require(q.size() == 2 && q[0].origin_update == 11 &&
                  q[1].origin_update == 12,
              "FIFO eviction order wrong");
    StrategyBuffer big(32);
    for (int i = 0; i < 40; ++i) {
      StrategyRecord r;
      r.task_id = 1;
      r.origin_update = i;
      big.push(r);
    }
    c.require(big.size(1) == 32 && big.entries(1)[0].origin_update == 8,
              "capacity-32 eviction wrong");
  }

  // else-if draw law: negative 0.25, positive (1-0.25)*0.1 = 0.075
  {
    StrategyBuffers bufs(4);
    StrategyRecord r;
    r.task_id = 0;
    bufs.good.push(r);
    bufs.bad.push(r);
    Rng rng(13);
    const int trials = 100000;
    int neg = 0, pos = 0;
    for (int i = 0; i < trials; ++i) {
      auto refl = draw_reflection(bufs, 0, 0.25, 0.1, rng);
      if (refl && refl->polarity == Polarity::kNegative) ++neg;
      if (refl && refl->polarity == Polarity::kPositive) ++pos;
    }
    double f_neg = static_cast<double>(neg) / trials;
    double f_pos = static_cast<double>(pos) / trials;
    c.require(std::abs(f_neg - 0.25) <= 0.005,
              "negative frequency " + fmt(f_neg));
    c.require(std::abs(f_pos - 0.075) <= 0.005,
              "positive frequency " + fmt(f_pos));
    c.note("neg " + fmt(f_neg) + ", pos " + fmt(f_pos));
  }

  // routing: every success lands in the good buffer, every failure in the bad
  {
    CombinationLockEnv env(easy_lock_params());
    PolicyParams p = init_policy(env.spec(), 0, 61);
    apply_concentration(p, env, 0.5, 2.5);
    StrategyBuffers bufs(100000);
    Rng rng(71);
    RolloutOptions opt;
    opt.group_size = 8;
    long successes = 0, failures = 0, violations = 0;
    auto strategy_of = [](const Trajectory& t) {
      std::vector<std::vector<int>> s;
      for (const auto& step : t.steps) {
        s.emplace_back();
        for (const auto& ev : step.strategy) s.back().push_back(ev.token);
      }
      return s;
    };
    std::map<int, std::vector<std::vector<std::vector<int>>>> want_good,
        want_bad;
    for (int i = 0; i < 50; ++i) {
      Goal goal{static_cast<int>(rng.next_below(32)), Split::kTrain};
      Group g = collect_group(p, env, goal, opt, bufs, rng);
      for (const auto& t : g.trajectories) {
        if (t.terminal_reward == 1.0) {
          ++successes;
          want_good[goal.task_id].push_back(strategy_of(t));
        } else {
          ++failures;
          want_bad[goal.task_id].push_back(strategy_of(t));
        }
      }
    }
    long good_total = 0, bad_total = 0;
    for (int task = 0; task < 32; ++task) {
      good_total += bufs.good.size(task);
      bad_total += bufs.bad.size(task);
      for (const auto& rec : bufs.good.entries(task))
        if (!rec.success) ++violations;
      for (const auto& rec : bufs.bad.entries(task))
        if (rec.success) ++violations;
    }
    if (good_total != successes || bad_total != failures) ++violations;
    // every collected strategy sequence is present on the right side
    auto contains = [](const StrategyBuffer& buf, int task,
                       const std::vector<std::vector<int>>& seq) {
      for (const auto& rec : buf.entries(task))
        if (rec.strategy_tokens == seq) return true;
      return false;
    };
    for (const auto& [task, seqs] : want_good)
      for (const auto& seq : seqs)
        if (!contains(bufs.good, task, seq)) ++violations;
    for (const auto& [task, seqs] : want_bad)
      for (const auto& seq : seqs)
        if (!contains(bufs.bad, task, seq)) ++violations;
    c.require(violations == 0,
              std::to_string(violations) + " routing violations");
    c.note(std::to_string(successes) + " successes / " +
           std::to_string(failures) + " failures routed");
  }
  return c.out;
}

// ---------------------------------------------------------------------------
// 8. Mixed temperature beats both uniform temperatures zero-shot.
// ---------------------------------------------------------------------------
Outcome criterion_temperature_grid() {
  Check c;
  auto env = make_env("noisy_tap");
  // concentration chosen so the zero-shot policy is plateaued; the ceilings
  // are verified on the measurement below
  const double beta = 2.25, gamma = 3.0;
  PolicyParams p = init_policy(env->spec(), 0, 0);
  apply_concentration(p, *env, beta, gamma);
  {
    EvalOptions o;
    o.ks = {1, 256};
    EvalResult r = evaluate(p, *env, Split::kTrain, 2048, 11, o);
    c.require(r.mean_pass(256) <= 0.05,
              "base pass@256 " + fmt(r.mean_pass(256)) + " > 0.05");
    c.require(r.mean_pass(1) <= 0.01,
              "base pass@1 " + fmt(r.mean_pass(1)) + " > 0.01");
  }

  const int attempts = 16384;
  struct Cond {
    double tau_s, tau;
    double pass16 = 0.0;
    double succ = 0.0;
  };
  std::vector<Cond> grid = {{1.2, 0.7}, {0.7, 0.7}, {1.2, 1.2}};
  for (Cond& cond : grid) {
    EvalOptions o;
    o.tau = cond.tau;
    o.mixed_temperature = true;
    o.tau_s = cond.tau_s;
    o.ks = {16};
    EvalResult r = evaluate(p, *env, Split::kTrain, attempts, 7, o);
    for (const auto& t : r.tasks) cond.succ += t.successes;
    cond.pass16 = r.mean_pass(16);
  }
  double n = attempts * 32.0;
  double z_cold = testutil::two_proportion_z(grid[0].succ, n, grid[1].succ, n);
  double z_hot = testutil::two_proportion_z(grid[0].succ, n, grid[2].succ, n);
  c.require(grid[0].pass16 > grid[1].pass16 && z_cold > kZ05,
            "mixed vs cold: pass@16 " + fmt(grid[0].pass16) + " vs " +
                fmt(grid[1].pass16) + ", z " + fmt(z_cold));
  c.require(grid[0].pass16 > grid[2].pass16 && z_hot > kZ05,
            "mixed vs hot: pass@16 " + fmt(grid[0].pass16) + " vs " +
                fmt(grid[2].pass16) + ", z " + fmt(z_hot));
  c.note("pass@16 mixed " + fmt(grid[0].pass16) + " / cold " +
         fmt(grid[1].pass16) + " / hot " + fmt(grid[2].pass16) + ", z " +
         fmt(z_cold) + " and " + fmt(z_hot));
  return c.out;
}

// ---------------------------------------------------------------------------
// 9/10 share the training runs.
// ---------------------------------------------------------------------------
struct TrainingStudy {
  double base_pass256 = 0.0;
  double beta = 0.0;
  std::vector<SeedRunResult> sge, grpo;
};

TrainingStudy run_training_study() {
  TrainingStudy study;
  auto env = make_env("combination_lock");
  // pick the concentration: start from the default and widen until the base
  // policy's measured ceilings hold (pass@256 <= 0.05, pass@1 <= 0.01)
  for (double beta : {3.25, 3.5, 3.75, 4.0, 3.0}) {
    PolicyParams p = init_policy(env->spec(), 0, 0);
    apply_concentration(p, *env, beta, 3.0);
    EvalOptions o;
    o.ks = {1, 256};
    EvalResult r = evaluate(p, *env, Split::kTrain, 2048, 11, o);
    if (r.mean_pass(256) <= 0.05 && r.mean_pass(1) <= 0.01) {
      study.beta = beta;
      study.base_pass256 = r.mean_pass(256);
      break;
    }
  }
  if (study.beta == 0.0)
    throw std::runtime_error("no concentration meets the base ceilings");

  fs::path out = fs::temp_directory_path() / "sgelab_acceptance_study";
  fs::remove_all(out);
  for (const char* method : {"sge", "grpo"}) {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
      RunConfig c;
      c.env_name = "combination_lock";
      c.beta = study.beta;
      c.gamma = 3.0;
      c.trainer.method = parse_method(method);
      c.updates = 500;
      c.eval_every = 500;
      c.eval_attempts = 64;
      c.out_dir = (out / (std::string(method) + std::to_string(seed))).string();
      SeedRunResult r = run_train_seed(c, seed);
      (c.trainer.method == Method::kSge ? study.sge : study.grpo)
          .push_back(std::move(r));
    }
  }
  return study;
}

Outcome criterion_phenomenon(const TrainingStudy& s) {
  Check c;
  double sge_floor = 5.0 * s.base_pass256;
  double grpo_ceiling = s.base_pass256 + 0.05;
  int sge_ok = 0, grpo_ok = 0;
  std::string sge_vals, grpo_vals;
  for (const auto& r : s.sge) {
    double v = r.final_train.mean_pass(1);
    if (v >= sge_floor) ++sge_ok;
    sge_vals += (sge_vals.empty() ? "" : "/") + fmt(v);
  }
  for (const auto& r : s.grpo) {
    double v = r.final_train.mean_pass(1);
    if (v <= grpo_ceiling) ++grpo_ok;
    grpo_vals += (grpo_vals.empty() ? "" : "/") + fmt(v);
  }
  c.require(sge_ok >= 2, "strategy-guided pass@1 " + sge_vals + " below " +
                             fmt(sge_floor) + " in too many seeds");
  c.require(grpo_ok >= 2, "plain-method pass@1 " + grpo_vals + " above " +
                              fmt(grpo_ceiling) + " in too many seeds");
  c.note("beta " + fmt(s.beta) + ", base pass@256 " + fmt(s.base_pass256) +
         ", sge pass@1 " + sge_vals + " (need >= " + fmt(sge_floor) +
         "), grpo pass@1 " + grpo_vals + " (need <= " + fmt(grpo_ceiling) +
         ")");
  return c.out;
}

Outcome criterion_exploration(const TrainingStudy& s) {
  Check c;
  int wins = 0;
  std::string vals;
  for (size_t i = 0; i < s.sge.size(); ++i) {
    if (s.sge[i].distinct_outcomes_cum >= s.grpo[i].distinct_outcomes_cum)
      ++wins;
    vals += (vals.empty() ? "" : ", ") + fmt(s.sge[i].distinct_outcomes_cum) +
            " vs " + fmt(s.grpo[i].distinct_outcomes_cum);
  }
  c.require(wins >= 2, "distinct outcomes " + vals);
  c.note("paired distinct outcomes (sge vs grpo): " + vals + "; " +
         std::to_string(wins) + "/3 seeds");
  return c.out;
}

// ---------------------------------------------------------------------------
// 11. Remote execution is bit-identical; golden corpus round-trips.
// ---------------------------------------------------------------------------
Outcome criterion_remote() {
  Check c;
  {
    std::ifstream in(std::string(SGELAB_FIXTURE_DIR) + "/wire_corpus.jsonl",
                     std::ios::binary);
    c.require(in.is_open(), "missing wire corpus");
    std::string line;
    int lines = 0, mismatches = 0;
    while (std::getline(in, line)) {
      line += "\n";
      if (encode_message(decode_message(line)) != line) ++mismatches;
      ++lines;
    }
    c.require(lines >= 20 && mismatches == 0,
              std::to_string(mismatches) + " corpus round-trip mismatches");
  }

  auto proto = make_env("combination_lock");
  EnvServer server(*proto, "127.0.0.1", 0);
  auto remote = connect_env("127.0.0.1", server.port());
  CombinationLockEnv local;
  PolicyParams p = init_policy(local.spec(), 0, 5);
  apply_concentration(p, local, 3.0, 3.0);
  StrategyBuffers b1(32), b2(32);
  RolloutOptions opt;
  Rng r1(404), r2(404);
  std::ostringstream local_records, remote_records;
  const int episodes = 1000;
  for (int e = 0; e < episodes; ++e) {
    Goal goal{e % 48, e % 48 < 32 ? Split::kTrain : Split::kTest};
    write_trajectory_record(
        local_records,
        rollout_episode(p, local, goal, e, opt, b1, r1, std::nullopt));
    write_trajectory_record(
        remote_records,
        rollout_episode(p, *remote, goal, e, opt, b2, r2, std::nullopt));
  }
  c.require(local_records.str() == remote_records.str(),
            "remote episode records differ from local");
  c.note(std::to_string(episodes) + " episodes bit-identical, corpus exact");
  return c.out;
}

// ---------------------------------------------------------------------------
// 12. A (config, seed) pair reproduces byte-identical artifacts.
// ---------------------------------------------------------------------------
Outcome criterion_reproducibility() {
  Check c;
  fs::path root = fs::temp_directory_path() / "sgelab_acceptance_repro";
  fs::remove_all(root);
  for (const char* run : {"a", "b"}) {
    RunConfig cfg;
    cfg.env_name = "combination_lock";
    cfg.trainer.method = Method::kSge;
    cfg.trainer.group_size = 8;
    cfg.trainer.tasks_per_update = 4;
    cfg.updates = 20;
    cfg.eval_every = 10;
    cfg.eval_attempts = 16;
    cfg.write_trajectories = true;
    cfg.out_dir = (root / run).string();
    run_train_seed(cfg, 7);
  }
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  };
  int files = 0, mismatches = 0;
  for (const auto& entry : fs::directory_iterator(root / "a")) {
    ++files;
    fs::path twin = root / "b" / entry.path().filename();
    if (!fs::exists(twin) || slurp(entry.path()) != slurp(twin)) ++mismatches;
  }
  c.require(files >= 5 && mismatches == 0,
            std::to_string(mismatches) + " of " + std::to_string(files) +
                " artifacts differ");
  c.note(std::to_string(files) + " artifacts byte-identical across two runs");
  return c.out;
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int index, const char* name, double budget_s,
                    const std::function<Outcome()>& fn) {
    auto t0 = Clock::now();
    Outcome out;
    try {
      out = fn();
    } catch (const std::exception& e) {
      out.ok = false;
      out.detail = std::string("exception: ") + e.what();
    }
    double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
    if (budget_s > 0.0 && elapsed > budget_s) {
      out.ok = false;
      out.detail += "; over time budget " + fmt(budget_s) + "s";
    }
    if (!out.ok) ++failures;
    std::printf("criterion %2d: %s  %s — %s (%.1fs)\n", index,
                out.ok ? "PASS" : "FAIL", name, out.detail.c_str(), elapsed);
    std::fflush(stdout);
  };

  report(1, "gradient correctness", 60.0, criterion_gradients);
  report(2, "first-epoch ratio consistency", 0.0, criterion_ratios);
  report(3, "sampler fidelity", 0.0, criterion_sampler);
  report(4, "pass@k oracle equivalence", 0.0, criterion_pass_at_k);
  report(5, "entropy-shaped advantage law", 0.0, criterion_entropy_shaping);
  report(6, "novelty bonus contracts", 0.0, criterion_novelty);
  report(7, "buffer and reflection law", 0.0, criterion_buffers);
  report(8, "mixed-temperature exploration grid", 300.0,
         criterion_temperature_grid);

  TrainingStudy study;
  bool study_ok = true;
  {
    auto t0 = Clock::now();
    try {
      study = run_training_study();
    } catch (const std::exception& e) {
      study_ok = false;
      std::printf("criterion  9: FAIL  training phenomenon — %s\n", e.what());
      std::printf("criterion 10: FAIL  exploration metric — training study "
                  "unavailable\n");
      failures += 2;
    }
    double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
    if (study_ok && elapsed > 1200.0) {
      std::printf("criterion  9: FAIL  training phenomenon — over time budget "
                  "(%.1fs)\n", elapsed);
      std::printf("criterion 10: FAIL  exploration metric — over time budget\n");
      failures += 2;
      study_ok = false;
    }
  }
  if (study_ok) {
    report(9, "training phenomenon", 0.0,
           [&] { return criterion_phenomenon(study); });
    report(10, "exploration metric", 0.0,
           [&] { return criterion_exploration(study); });
  }

  report(11, "remote transparency", 0.0, criterion_remote);
  report(12, "reproducibility", 0.0, criterion_reproducibility);

  if (failures) std::printf("%d criterion(s) failed\n", failures);
  return failures ? 1 : 0;
}
