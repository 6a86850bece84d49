#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "sgelab/policy.hpp"
#include "sgelab/sge.hpp"

namespace sgelab {

struct NonpositiveRatio : std::runtime_error {
  NonpositiveRatio() : std::runtime_error("importance ratio must be > 0") {}
};

struct NonFiniteLoss : std::runtime_error {
  explicit NonFiniteLoss(int update_index)
      : std::runtime_error("non-finite loss at update " +
                           std::to_string(update_index)),
        update_index(update_index) {}
  int update_index;
};

enum class Method { kGrpo, kSge, kEntropyAdv, kRnd, kRlad };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::kGrpo: return "grpo";
    case Method::kSge: return "sge";
    case Method::kEntropyAdv: return "entropy_adv";
    case Method::kRnd: return "rnd";
    case Method::kRlad: return "rlad";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "grpo") return Method::kGrpo;
  if (s == "sge") return Method::kSge;
  if (s == "entropy_adv") return Method::kEntropyAdv;
  if (s == "rnd") return Method::kRnd;
  if (s == "rlad") return Method::kRlad;
  throw std::runtime_error("unknown method: " + s);
}

struct TrainerConfig {
  Method method = Method::kSge;
  double learning_rate = 0.05;
  int group_size = 16;     // K
  double clip_eps = 0.2;   // epsilon
  int epochs = 2;          // per-update epochs
  int tasks_per_update = 8;
  // EntropyAdv
  double entropy_alpha = 0.4;
  double entropy_kappa = 2.0;
  // RND
  int rnd_latent = 16;
  int rnd_hidden = 32;
  double rnd_lr = 1e-3;
  // RLAD
  double rlad_kl_coeff = 0.001;
  double rlad_dropout = 0.25;

  void validate() const {
    if (clip_eps <= 0.0 || clip_eps >= 1.0)
      throw std::invalid_argument("clip_eps must be in (0,1)");
    if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
    if (rlad_dropout < 0.0 || rlad_dropout > 1.0)
      throw std::invalid_argument("rlad_dropout must be in [0,1]");
    if (entropy_kappa <= 0.0)
      throw std::invalid_argument("entropy_kappa must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Advantage estimation
// ---------------------------------------------------------------------------

// Group-relative advantages: (r - mean) / (population std + 1e-6), exactly
// zero when all rewards are equal.
inline std::vector<double> grpo_advantages(const std::vector<double>& rewards) {
  size_t n = rewards.size();
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(n);
  bool all_equal = true;
  for (double r : rewards)
    if (r != rewards[0]) all_equal = false;
  if (all_equal) return std::vector<double>(n, 0.0);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(n);
  double denom = std::sqrt(var) + 1e-6;
  std::vector<double> adv(n);
  for (size_t i = 0; i < n; ++i) adv[i] = (rewards[i] - mean) / denom;
  return adv;
}

inline std::vector<double> group_rewards(const Group& g) {
  std::vector<double> r;
  r.reserve(g.trajectories.size());
  for (const auto& t : g.trajectories) r.push_back(t.terminal_reward);
  return r;
}

// Dynamic sampling: drop groups whose rewards are all equal (zero gradient
// signal), keeping the rest in order.
inline std::vector<Group> dynamic_filter(std::vector<Group> groups) {
  std::vector<Group> out;
  for (auto& g : groups) {
    auto r = group_rewards(g);
    bool all_equal = true;
    for (double v : r)
      if (v != r[0]) all_equal = false;
    if (!all_equal) out.push_back(std::move(g));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Clipped surrogate objective (token-level mean, symmetric clip)
// ---------------------------------------------------------------------------

struct ClipObjective {
  double loss = 0.0;
  std::vector<double> grad_coeffs;  // d loss / d ratio_i
  double clip_fraction = 0.0;
};

inline ClipObjective ppo_clip_objective(const std::vector<double>& ratios,
                                        const std::vector<double>& advantages,
                                        double eps) {
  size_t n = ratios.size();
  ClipObjective out;
  out.grad_coeffs.assign(n, 0.0);
  int clipped = 0;
  for (size_t i = 0; i < n; ++i) {
    double rho = ratios[i];
    if (rho <= 0.0) throw NonpositiveRatio();
    double a = advantages[i];
    double clip_rho = std::min(std::max(rho, 1.0 - eps), 1.0 + eps);
    double term = std::min(rho * a, clip_rho * a);
    out.loss -= term / static_cast<double>(n);
    if (rho * a <= clip_rho * a)
      out.grad_coeffs[i] = -a / static_cast<double>(n);
    if (rho < 1.0 - eps || rho > 1.0 + eps) ++clipped;
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n);
  return out;
}

// EntropyAdv shaping: A' = A + min(alpha * H, |A| / kappa); the entropy term
// is a detached constant.
inline double entropy_adv_shape(double advantage, double token_entropy,
                                double alpha, double kappa) {
  return advantage +
         std::min(alpha * token_entropy, std::abs(advantage) / kappa);
}

// ---------------------------------------------------------------------------
// Small MLP used by the RND pair: in -> hidden (tanh) -> out.
// ---------------------------------------------------------------------------

inline size_t mlp_param_count(int in, int hidden, int out) {
  return static_cast<size_t>(in) * hidden + hidden +
         static_cast<size_t>(hidden) * out + out;
}

inline void mlp_forward(const std::vector<double>& theta, int in, int hidden,
                        int out, std::span<const double> x,
                        std::vector<double>& y, std::vector<double>* cache) {
  const double* w1 = theta.data();
  const double* b1 = w1 + static_cast<size_t>(in) * hidden;
  const double* w2 = b1 + hidden;
  const double* b2 = w2 + static_cast<size_t>(hidden) * out;
  std::vector<double> h(b1, b1 + hidden);
  for (int j = 0; j < in; ++j) {
    double xv = x[j];
    if (xv == 0.0) continue;
    const double* row = w1 + static_cast<size_t>(j) * hidden;
    for (int k = 0; k < hidden; ++k) h[k] += xv * row[k];
  }
  for (double& v : h) v = std::tanh(v);
  y.assign(b2, b2 + out);
  for (int k = 0; k < hidden; ++k) {
    const double* row = w2 + static_cast<size_t>(k) * out;
    for (int v = 0; v < out; ++v) y[v] += h[k] * row[v];
  }
  if (cache) *cache = std::move(h);
}

inline void mlp_backward(const std::vector<double>& theta, int in, int hidden,
                         int out, std::span<const double> x,
                         const std::vector<double>& cache,
                         std::span<const double> dy,
                         std::vector<double>& grad) {
  const double* w2 = theta.data() + static_cast<size_t>(in) * hidden + hidden;
  double* g1 = grad.data();
  double* gb1 = g1 + static_cast<size_t>(in) * hidden;
  double* g2 = gb1 + hidden;
  double* gb2 = g2 + static_cast<size_t>(hidden) * out;
  for (int v = 0; v < out; ++v) gb2[v] += dy[v];
  std::vector<double> dh(hidden, 0.0);
  for (int k = 0; k < hidden; ++k) {
    double hv = cache[k];
    double* row = g2 + static_cast<size_t>(k) * out;
    const double* wrow = w2 + static_cast<size_t>(k) * out;
    double acc = 0.0;
    for (int v = 0; v < out; ++v) {
      row[v] += hv * dy[v];
      acc += wrow[v] * dy[v];
    }
    dh[k] = acc * (1.0 - hv * hv);
  }
  for (int k = 0; k < hidden; ++k) gb1[k] += dh[k];
  for (int j = 0; j < in; ++j) {
    double xv = x[j];
    if (xv == 0.0) continue;
    double* row = g1 + static_cast<size_t>(j) * hidden;
    for (int k = 0; k < hidden; ++k) row[k] += xv * dh[k];
  }
}

// ---------------------------------------------------------------------------
// Random network distillation
// ---------------------------------------------------------------------------

struct RndPair {
  int in_dim = 0;
  int hidden = 32;
  int latent = 16;
  std::vector<double> target;     // frozen after construction
  std::vector<double> predictor;  // trained
  // running population statistics of prediction errors
  long long count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  static RndPair init(int in_dim, int hidden, int latent, uint64_t seed) {
    RndPair p;
    p.in_dim = in_dim;
    p.hidden = hidden;
    p.latent = latent;
    size_t n = mlp_param_count(in_dim, hidden, latent);
    p.target.resize(n);
    p.predictor.resize(n);
    Rng rng(hash_mix(seed, 0x12d));
    for (double& v : p.target) v = rng.next_normal() / std::sqrt(in_dim);
    for (double& v : p.predictor) v = rng.next_normal() / std::sqrt(in_dim);
    return p;
  }

  double error(std::span<const double> x) const {
    std::vector<double> zt, zp;
    mlp_forward(target, in_dim, hidden, latent, x, zt, nullptr);
    mlp_forward(predictor, in_dim, hidden, latent, x, zp, nullptr);
    double e = 0.0;
    for (int i = 0; i < latent; ++i) e += (zp[i] - zt[i]) * (zp[i] - zt[i]);
    return e;
  }

  double error_std() const {
    return count >= 2 ? std::sqrt(m2 / static_cast<double>(count)) : 0.0;
  }
};

// Normalized novelty bonus; zero until the error accumulator has warmed up.
inline double rnd_reward(const RndPair& pair, std::span<const double> x) {
  double sd = pair.error_std();
  if (sd <= 0.0) return 0.0;
  return pair.error(x) / sd;
}

// One gradient step of the predictor on the mean squared prediction error
// over a batch; the target never changes. Errors measured before the step
// feed the running statistics.
inline void rnd_update(RndPair& pair, const std::vector<std::vector<double>>& batch,
                       double lr) {
  if (batch.empty()) return;
  std::vector<double> grad(pair.predictor.size(), 0.0);
  std::vector<double> zt, zp, cache, de(pair.latent);
  for (const auto& x : batch) {
    mlp_forward(pair.target, pair.in_dim, pair.hidden, pair.latent, x, zt,
                nullptr);
    mlp_forward(pair.predictor, pair.in_dim, pair.hidden, pair.latent, x, zp,
                &cache);
    double e = 0.0;
    for (int i = 0; i < pair.latent; ++i) {
      double d = zp[i] - zt[i];
      e += d * d;
      de[i] = 2.0 * d / static_cast<double>(batch.size());
    }
    pair.count += 1;
    double delta = e - pair.mean;
    pair.mean += delta / static_cast<double>(pair.count);
    pair.m2 += delta * (e - pair.mean);
    mlp_backward(pair.predictor, pair.in_dim, pair.hidden, pair.latent, x,
                 cache, de, grad);
  }
  for (size_t i = 0; i < pair.predictor.size(); ++i)
    pair.predictor[i] -= lr * grad[i];
}

// Final-step context plus a bag of the action tokens; the input to the RND
// pair for one trajectory.
inline std::vector<double> rnd_encoding(const PolicyDims& dims,
                                        const Trajectory& traj) {
  const auto& last = traj.steps.back();
  std::vector<double> ctx;
  build_context(dims, last.obs,
                last.reflection ? last.reflection : traj.reflection, ctx);
  ctx.resize(dims.ctx_dim() + dims.vocab, 0.0);
  for (const auto& ev : last.remainder) ctx[dims.ctx_dim() + ev.token] += 1.0;
  return ctx;
}

inline int rnd_encoding_dim(const PolicyDims& dims) {
  return dims.ctx_dim() + dims.vocab;
}

// ---------------------------------------------------------------------------
// RLAD terms: KL penalty to the frozen reference policy plus per-trajectory
// strategy dropout masks.
// ---------------------------------------------------------------------------

struct RladTerms {
  double kl_penalty = 0.0;         // kl_coeff * mean per-token KL
  std::vector<bool> dropout_mask;  // one entry per trajectory
};

inline double categorical_kl(std::span<const double> logp,
                             std::span<const double> logq) {
  double kl = 0.0;
  for (size_t i = 0; i < logp.size(); ++i) {
    double p = std::exp(logp[i]);
    if (p > 0.0) kl += p * (logp[i] - logq[i]);
  }
  return kl;
}

inline RladTerms rlad_terms(const PolicyParams& params,
                            const PolicyParams& ref,
                            const std::vector<const Trajectory*>& batch,
                            double kl_coeff, double dropout_prob, Rng& rng) {
  RladTerms out;
  double kl_sum = 0.0;
  size_t n_tokens = 0;
  std::vector<double> lg, lgr, lp, lq;
  for (const Trajectory* traj : batch) {
    out.dropout_mask.push_back(rng.next_double() < dropout_prob);
    detail::for_each_token(params, *traj,
                           [&](Head h, std::span<const double> x,
                               const TokenEvent& ev) {
                             params.logits(h, x, lg);
                             ref.logits(h, x, lgr);
                             log_softmax(lg, ev.temperature, lp);
                             log_softmax(lgr, ev.temperature, lq);
                             kl_sum += categorical_kl(lp, lq);
                             ++n_tokens;
                           });
  }
  if (n_tokens > 0)
    out.kl_penalty = kl_coeff * kl_sum / static_cast<double>(n_tokens);
  return out;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct Adam {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long t = 0;
  std::vector<double> m, v;

  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    ++t;
    double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

// ---------------------------------------------------------------------------
// Batch loss with analytic gradient
// ---------------------------------------------------------------------------

struct BatchLoss {
  double loss = 0.0;
  double mean_ratio = 0.0;
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;
  size_t token_count = 0;
};

// Evaluates the clipped surrogate (token-level mean over the whole batch)
// with the trajectory advantage broadcast to every token, plus an optional
// KL penalty to a reference policy. Per-token advantages may be overridden
// (entropy shaping). Gradient accumulation is optional so the same function
// serves the finite-difference oracle.
inline BatchLoss batch_loss_and_grad(
    const PolicyParams& params, const std::vector<const Trajectory*>& batch,
    const std::vector<std::vector<double>>& token_advantages, double eps,
    const PolicyParams* ref, double kl_coeff, std::vector<double>* grad) {
  BatchLoss out;
  size_t n_tokens = 0;
  for (const Trajectory* t : batch)
    for (const auto& s : t->steps)
      n_tokens += s.strategy.size() + s.remainder.size();
  out.token_count = n_tokens;
  if (n_tokens == 0) return out;
  double inv_n = 1.0 / static_cast<double>(n_tokens);

  std::vector<double> lg, lgr, lp, lq, cache, dlogits;
  int clipped = 0;
  for (size_t ti = 0; ti < batch.size(); ++ti) {
    const Trajectory& traj = *batch[ti];
    size_t tok = 0;
    detail::for_each_token(params, traj, [&](Head h, std::span<const double> x,
                                             const TokenEvent& ev) {
      double adv = token_advantages[ti][tok];
      ++tok;
      cache.clear();
      params.logits(h, x, lg, &cache);
      log_softmax(lg, ev.temperature, lp);
      double lp_cur = lp[ev.token];
      double rho = std::exp(lp_cur - ev.logprob);
      if (rho <= 0.0 || !std::isfinite(rho)) throw NonpositiveRatio();
      out.mean_ratio += rho * inv_n;
      double h_tok = 0.0;
      for (double v : lp) {
        double p = std::exp(v);
        if (p > 0.0) h_tok -= p * v;
      }
      out.mean_entropy += h_tok * inv_n;

      double clip_rho = std::min(std::max(rho, 1.0 - eps), 1.0 + eps);
      out.loss -= std::min(rho * adv, clip_rho * adv) * inv_n;
      if (rho < 1.0 - eps || rho > 1.0 + eps) ++clipped;

      // d loss / d logp_cur: surrogate term (via rho) when unclipped.
      double dlp = 0.0;
      if (rho * adv <= clip_rho * adv) dlp = -adv * rho * inv_n;

      if (grad || (ref && kl_coeff != 0.0)) {
        dlogits.assign(lg.size(), 0.0);
        if (dlp != 0.0) {
          for (size_t v = 0; v < lg.size(); ++v)
            dlogits[v] -= dlp * std::exp(lp[v]) / ev.temperature;
          dlogits[ev.token] += dlp / ev.temperature;
        }
        if (ref && kl_coeff != 0.0) {
          ref->logits(h, x, lgr);
          log_softmax(lgr, ev.temperature, lq);
          double kl = categorical_kl(lp, lq);
          out.loss += kl_coeff * kl * inv_n;
          double scale = kl_coeff * inv_n / ev.temperature;
          for (size_t v = 0; v < lg.size(); ++v)
            dlogits[v] += scale * std::exp(lp[v]) * (lp[v] - lq[v] - kl);
        }
        if (grad) params.backprop(h, x, cache, dlogits, *grad);
      } else if (ref && kl_coeff != 0.0) {
        // unreachable; kept for clarity
      }
    });
  }
  out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(n_tokens);
  if (!std::isfinite(out.loss)) throw NonFiniteLoss(-1);
  return out;
}

// ---------------------------------------------------------------------------
// Full parameter update
// ---------------------------------------------------------------------------

struct TrainerState {
  Adam adam;
  std::optional<RndPair> rnd;
  std::optional<PolicyParams> reference;  // RLAD: frozen copy of init params
};

struct UpdateStats {
  bool skipped = false;
  double loss = 0.0;
  double mean_ratio = 0.0;
  double mean_entropy = 0.0;
  double clip_fraction = 0.0;
};

inline void init_trainer_state(TrainerState& state, const TrainerConfig& cfg,
                               const PolicyParams& policy, uint64_t seed) {
  state.adam.lr = cfg.learning_rate;
  if (cfg.method == Method::kRnd && !state.rnd)
    state.rnd = RndPair::init(rnd_encoding_dim(policy.dims), cfg.rnd_hidden,
                              cfg.rnd_latent, seed);
  if (cfg.method == Method::kRlad && !state.reference)
    state.reference = policy;
}

// One optimization phase over a filtered batch of groups: E epochs of the
// clipped surrogate with the method-specific advantage transformation.
inline UpdateStats update_step(PolicyParams& policy,
                               const std::vector<Group>& groups,
                               const TrainerConfig& cfg, TrainerState& state) {
  UpdateStats stats;
  if (groups.empty()) {
    stats.skipped = true;
    return stats;
  }

  std::vector<const Trajectory*> batch;
  std::vector<double> traj_adv;
  for (const auto& g : groups) {
    std::vector<double> rewards = group_rewards(g);
    if (cfg.method == Method::kRnd) {
      // novelty bonus only for trajectories with zero environment reward
      for (size_t i = 0; i < rewards.size(); ++i) {
        if (rewards[i] == 0.0)
          rewards[i] += rnd_reward(*state.rnd,
                                   rnd_encoding(policy.dims,
                                                g.trajectories[i]));
      }
    }
    std::vector<double> adv = grpo_advantages(rewards);
    for (size_t i = 0; i < g.trajectories.size(); ++i) {
      batch.push_back(&g.trajectories[i]);
      traj_adv.push_back(adv[i]);
    }
  }

  if (cfg.method == Method::kRnd) {
    std::vector<std::vector<double>> encodings;
    for (const Trajectory* t : batch)
      encodings.push_back(rnd_encoding(policy.dims, *t));
    rnd_update(*state.rnd, encodings, cfg.rnd_lr);
  }

  const PolicyParams* ref =
      cfg.method == Method::kRlad && state.reference ? &*state.reference
                                                     : nullptr;
  double kl_coeff = cfg.method == Method::kRlad ? cfg.rlad_kl_coeff : 0.0;

  std::vector<double> grad(policy.theta.size());
  std::vector<std::vector<double>> token_adv(batch.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // broadcast the trajectory advantage; entropy shaping recomputes the
    // (detached) token entropies at the current parameters
    for (size_t ti = 0; ti < batch.size(); ++ti) {
      const Trajectory& traj = *batch[ti];
      auto& adv = token_adv[ti];
      adv.clear();
      if (cfg.method == Method::kEntropyAdv) {
        std::vector<double> lg;
        detail::for_each_token(
            policy, traj,
            [&](Head h, std::span<const double> x, const TokenEvent& ev) {
              policy.logits(h, x, lg);
              double h_tok = entropy(lg, ev.temperature);
              adv.push_back(entropy_adv_shape(traj_adv[ti], h_tok,
                                              cfg.entropy_alpha,
                                              cfg.entropy_kappa));
            });
      } else {
        for (const auto& s : traj.steps) {
          size_t n = s.strategy.size() + s.remainder.size();
          for (size_t i = 0; i < n; ++i) adv.push_back(traj_adv[ti]);
        }
      }
    }

    std::fill(grad.begin(), grad.end(), 0.0);
    BatchLoss bl = batch_loss_and_grad(policy, batch, token_adv, cfg.clip_eps,
                                       ref, kl_coeff, &grad);
    if (epoch == 0) {
      stats.loss = bl.loss;
      stats.mean_ratio = bl.mean_ratio;
      stats.mean_entropy = bl.mean_entropy;
      stats.clip_fraction = bl.clip_fraction;
    }
    bool zero_grad = true;
    for (double g : grad)
      if (g != 0.0) zero_grad = false;
    if (!zero_grad) state.adam.step(policy.theta, grad);
  }
  return stats;
}

}  // namespace sgelab
