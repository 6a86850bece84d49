#pragma once

// Shared test utilities: finite-difference oracles and synthetic trajectory
// builders used across the suites.

#include <cmath>
#include <functional>
#include <vector>

#include "sgelab/policy.hpp"
#include "sgelab/sge.hpp"

namespace testutil {

// Central finite differences of a scalar function of theta.
inline std::vector<double> fd_gradient(
    sgelab::PolicyParams& p, const std::function<double()>& f, double h) {
  std::vector<double> g(p.theta.size());
  for (size_t i = 0; i < p.theta.size(); ++i) {
    double keep = p.theta[i];
    p.theta[i] = keep + h;
    double up = f();
    p.theta[i] = keep - h;
    double down = f();
    p.theta[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max |a-b| / max(1, |a|, |b|)
inline double max_rel_err(const std::vector<double>& a,
                          const std::vector<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

// A synthetic trajectory with random observations and tokens; logprobs are
// filled from the policy itself so temperature-consistency tests can rely on
// them.
inline sgelab::Trajectory random_trajectory(const sgelab::PolicyParams& p,
                                            sgelab::Rng& rng, int steps,
                                            double tau, double tau_s,
                                            bool with_reflection = false,
                                            bool dropout = false) {
  using namespace sgelab;
  Trajectory traj;
  traj.goal = Goal{0, Split::kTrain};
  traj.strategy_dropout = dropout;
  if (with_reflection) {
    ReflectionContext rc;
    rc.polarity = rng.next_double() < 0.5 ? Polarity::kPositive
                                          : Polarity::kNegative;
    for (int s = 0; s < p.dims.horizon; ++s)
      rc.strategy_tokens.push_back(
          {static_cast<int>(rng.next_below(p.dims.vocab))});
    for (int i = 0; i < p.dims.obs_dim; ++i)
      rc.feedback.push_back(rng.next_double());
    traj.reflection = rc;
  }
  std::vector<double> ctx, x, lg;
  for (int s = 0; s < steps; ++s) {
    TrajectoryStep step;
    step.obs.step_index = s + 1;
    step.obs.features.assign(p.dims.obs_dim, 0.0);
    // sparse-ish random features
    for (int i = 0; i < p.dims.obs_dim; ++i)
      if (rng.next_double() < 0.3) step.obs.features[i] = rng.next_double();
    build_context(p.dims, step.obs, traj.reflection, ctx);
    std::vector<int> strat;
    for (int i = 0; i < p.dims.strategy_len; ++i) {
      p.logits(Head::kStrategy, ctx, lg);
      TokenEvent ev = sample_token(lg, tau_s, rng, Segment::kStrategy);
      step.strategy.push_back(ev);
      strat.push_back(ev.token);
    }
    for (int pos = 0; pos < p.dims.remainder_len; ++pos) {
      build_remainder_input(p.dims, ctx, strat, pos, dropout, x);
      p.logits(Head::kRemainder, x, lg);
      TokenEvent ev = sample_token(lg, tau, rng, Segment::kRemainder);
      step.remainder.push_back(ev);
      step.action.push_back(ev.token);
    }
    traj.steps.push_back(std::move(step));
  }
  traj.terminal_reward = rng.next_double() < 0.5 ? 1.0 : 0.0;
  return traj;
}

// Small-policy factory for gradient tests.
inline sgelab::PolicyParams small_policy(int hidden, uint64_t seed,
                                         int vocab = 5, int obs_dim = 7,
                                         int horizon = 2) {
  sgelab::EnvSpec spec;
  spec.vocab = vocab;
  spec.strategy_len = 1;
  spec.remainder_len = 2;
  spec.horizon = horizon;
  spec.obs_dim = obs_dim;
  spec.train_tasks = 2;
  spec.test_tasks = 1;
  sgelab::PolicyParams p = sgelab::init_policy(spec, hidden, seed);
  // larger weights than the 0.02 default so gradients are not vanishingly flat
  sgelab::Rng rng(sgelab::hash_mix(seed, 99));
  for (double& v : p.theta) v = 0.3 * rng.next_normal();
  return p;
}

// Two-proportion z-test statistic for x1/n1 > x2/n2 (one-sided).
inline double two_proportion_z(double x1, double n1, double x2, double n2) {
  double p1 = x1 / n1, p2 = x2 / n2;
  double pool = (x1 + x2) / (n1 + n2);
  double se = std::sqrt(pool * (1.0 - pool) * (1.0 / n1 + 1.0 / n2));
  if (se == 0.0) return 0.0;
  return (p1 - p2) / se;
}

}  // namespace testutil
