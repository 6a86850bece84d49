#pragma once

#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "sgelab/core.hpp"
#include "sgelab/envs.hpp"

namespace sgelab {

// ---------------------------------------------------------------------------
// Tempered softmax primitives
// ---------------------------------------------------------------------------

inline void log_softmax(std::span<const double> logits, double tau,
                        std::vector<double>& out) {
  if (tau <= 0.0) throw NonpositiveTemperature();
  out.resize(logits.size());
  double mx = -HUGE_VAL;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = logits[i] / tau;
    if (out[i] > mx) mx = out[i];
  }
  double sum = 0.0;
  for (double& v : out) sum += std::exp(v - mx);
  double lse = mx + std::log(sum);
  for (double& v : out) v -= lse;
}

inline double entropy(std::span<const double> logits, double tau) {
  std::vector<double> lp;
  log_softmax(logits, tau, lp);
  double h = 0.0;
  for (double v : lp) {
    double p = std::exp(v);
    if (p > 0.0) h -= p * v;
  }
  return h;
}

inline TokenEvent sample_token(std::span<const double> logits, double tau,
                               Rng& rng, Segment segment) {
  std::vector<double> lp;
  log_softmax(logits, tau, lp);
  double u = rng.next_double();
  double acc = 0.0;
  int pick = static_cast<int>(lp.size()) - 1;
  for (size_t i = 0; i < lp.size(); ++i) {
    acc += std::exp(lp[i]);
    if (u < acc) {
      pick = static_cast<int>(i);
      break;
    }
  }
  TokenEvent ev;
  ev.token = pick;
  ev.logprob = lp[pick];
  ev.temperature = tau;
  ev.segment = segment;
  return ev;
}

// ---------------------------------------------------------------------------
// Policy parameters: two heads (strategy, remainder), each a linear map or a
// one-hidden-layer tanh MLP, over a shared flat parameter vector.
// ---------------------------------------------------------------------------

struct PolicyDims {
  int vocab = 0;
  int obs_dim = 0;
  int horizon = 0;
  int strategy_len = 0;
  int remainder_len = 0;
  int hidden = 0;  // 0 = linear heads

  // context = observation | reflection strategy bag | feedback | polarity
  int ctx_dim() const { return obs_dim + horizon * vocab + obs_dim + 2; }
  int strat_in() const { return ctx_dim(); }
  int rem_in() const { return ctx_dim() + strategy_len * vocab + remainder_len; }

  bool operator==(const PolicyDims&) const = default;
};

inline size_t head_param_count(int in, int out, int hidden) {
  if (hidden == 0) return static_cast<size_t>(in) * out + out;
  return static_cast<size_t>(in) * hidden + hidden +
         static_cast<size_t>(hidden) * out + out;
}

enum class Head { kStrategy, kRemainder };

struct PolicyParams {
  PolicyDims dims;
  std::vector<double> theta;
  uint64_t seed = 0;

  size_t strategy_offset() const { return 0; }
  size_t remainder_offset() const {
    return head_param_count(dims.strat_in(), dims.vocab, dims.hidden);
  }
  size_t param_count() const {
    return remainder_offset() +
           head_param_count(dims.rem_in(), dims.vocab, dims.hidden);
  }

  size_t head_offset(Head h) const {
    return h == Head::kStrategy ? strategy_offset() : remainder_offset();
  }
  int head_in(Head h) const {
    return h == Head::kStrategy ? dims.strat_in() : dims.rem_in();
  }

  // Forward pass. For hidden heads, `cache` receives the hidden activations
  // needed by backprop. Inputs are mostly sparse one-hot blocks, so zero
  // entries are skipped.
  void logits(Head h, std::span<const double> x, std::vector<double>& out,
              std::vector<double>* cache = nullptr) const {
    int in = head_in(h);
    if (static_cast<int>(x.size()) != in) throw DimensionMismatch("logits input");
    const double* p = theta.data() + head_offset(h);
    int V = dims.vocab;
    if (dims.hidden == 0) {
      const double* b = p + static_cast<size_t>(in) * V;
      out.assign(b, b + V);
      for (int j = 0; j < in; ++j) {
        double xv = x[j];
        if (xv == 0.0) continue;
        const double* row = p + static_cast<size_t>(j) * V;
        for (int v = 0; v < V; ++v) out[v] += xv * row[v];
      }
    } else {
      int H = dims.hidden;
      const double* w1 = p;
      const double* b1 = p + static_cast<size_t>(in) * H;
      const double* w2 = b1 + H;
      const double* b2 = w2 + static_cast<size_t>(H) * V;
      std::vector<double> hbuf(b1, b1 + H);
      for (int j = 0; j < in; ++j) {
        double xv = x[j];
        if (xv == 0.0) continue;
        const double* row = w1 + static_cast<size_t>(j) * H;
        for (int k = 0; k < H; ++k) hbuf[k] += xv * row[k];
      }
      for (double& v : hbuf) v = std::tanh(v);
      out.assign(b2, b2 + V);
      for (int k = 0; k < H; ++k) {
        double hv = hbuf[k];
        const double* row = w2 + static_cast<size_t>(k) * V;
        for (int v = 0; v < V; ++v) out[v] += hv * row[v];
      }
      if (cache) *cache = std::move(hbuf);
    }
  }

  // Accumulates d(dlogits . logits)/dtheta into grad (same shape as theta).
  void backprop(Head h, std::span<const double> x,
                const std::vector<double>& cache,
                std::span<const double> dlogits,
                std::vector<double>& grad) const {
    int in = head_in(h);
    int V = dims.vocab;
    double* g = grad.data() + head_offset(h);
    if (dims.hidden == 0) {
      double* gb = g + static_cast<size_t>(in) * V;
      for (int v = 0; v < V; ++v) gb[v] += dlogits[v];
      for (int j = 0; j < in; ++j) {
        double xv = x[j];
        if (xv == 0.0) continue;
        double* row = g + static_cast<size_t>(j) * V;
        for (int v = 0; v < V; ++v) row[v] += xv * dlogits[v];
      }
    } else {
      int H = dims.hidden;
      const double* p = theta.data() + head_offset(h);
      const double* w2 = p + static_cast<size_t>(in) * H + H;
      double* g1 = g;
      double* gb1 = g + static_cast<size_t>(in) * H;
      double* g2 = gb1 + H;
      double* gb2 = g2 + static_cast<size_t>(H) * V;
      for (int v = 0; v < V; ++v) gb2[v] += dlogits[v];
      std::vector<double> dh(H, 0.0);
      for (int k = 0; k < H; ++k) {
        double hv = cache[k];
        double* row = g2 + static_cast<size_t>(k) * V;
        double acc = 0.0;
        const double* wrow = w2 + static_cast<size_t>(k) * V;
        for (int v = 0; v < V; ++v) {
          row[v] += hv * dlogits[v];
          acc += wrow[v] * dlogits[v];
        }
        dh[k] = acc * (1.0 - hv * hv);
      }
      for (int k = 0; k < H; ++k) gb1[k] += dh[k];
      for (int j = 0; j < in; ++j) {
        double xv = x[j];
        if (xv == 0.0) continue;
        double* row = g1 + static_cast<size_t>(j) * H;
        for (int k = 0; k < H; ++k) row[k] += xv * dh[k];
      }
    }
  }
};

inline PolicyParams init_policy(const EnvSpec& spec, int hidden, uint64_t seed) {
  PolicyParams p;
  p.dims.vocab = spec.vocab;
  p.dims.obs_dim = spec.obs_dim;
  p.dims.horizon = spec.horizon;
  p.dims.strategy_len = spec.strategy_len;
  p.dims.remainder_len = spec.remainder_len;
  p.dims.hidden = hidden;
  p.seed = seed;
  p.theta.resize(p.param_count());
  Rng rng(hash_mix(seed, 0x5ee2));
  for (double& v : p.theta) v = 0.02 * rng.next_normal();
  return p;
}

// Concentrated base policy: a logit gap `beta` toward one designated wrong
// strategy token per step, plus intent-faithful remainder weights of
// strength `gamma` so that a sampled strategy reliably maps to its intended
// outcome. Linear heads only.
inline void apply_concentration(PolicyParams& p, const Env& env, double beta,
                                double gamma) {
  if (p.dims.hidden != 0)
    throw std::invalid_argument("concentration requires linear heads");
  const EnvSpec& spec = env.spec();
  int V = p.dims.vocab;
  double* ws = p.theta.data() + p.strategy_offset();
  // step one-hot block sits after the task one-hot inside the observation
  for (int s = 0; s < spec.horizon; ++s) {
    int col = spec.total_tasks() + s;
    ws[static_cast<size_t>(col) * V + env.designated_strategy_token(s)] += beta;
  }
  double* wr = p.theta.data() + p.remainder_offset();
  for (int tok = 0; tok < V; ++tok) {
    int col = p.dims.ctx_dim() + tok;  // strategy position 0 one-hot
    int intent = env.intent_of_token(tok);
    std::vector<bool> boost(V, false);
    for (int pos = 0; pos < spec.remainder_len; ++pos)
      for (int t : env.faithful_tokens(intent, pos)) boost[t] = true;
    for (int t = 0; t < V; ++t)
      if (boost[t]) wr[static_cast<size_t>(col) * V + t] += gamma;
  }
}

// ---------------------------------------------------------------------------
// Context and head-input construction
// ---------------------------------------------------------------------------

inline void build_context(const PolicyDims& dims, const Observation& obs,
                          const std::optional<ReflectionContext>& refl,
                          std::vector<double>& ctx) {
  if (static_cast<int>(obs.features.size()) != dims.obs_dim)
    throw DimensionMismatch("observation features");
  ctx.assign(dims.ctx_dim(), 0.0);
  std::copy(obs.features.begin(), obs.features.end(), ctx.begin());
  if (refl) {
    int bag = dims.obs_dim;
    for (size_t s = 0; s < refl->strategy_tokens.size(); ++s) {
      if (static_cast<int>(s) >= dims.horizon) break;
      for (int tok : refl->strategy_tokens[s])
        ctx[bag + s * dims.vocab + tok] += 1.0;
    }
    int fb = dims.obs_dim + dims.horizon * dims.vocab;
    for (size_t i = 0; i < refl->feedback.size() &&
                       static_cast<int>(i) < dims.obs_dim; ++i)
      ctx[fb + i] = refl->feedback[i];
    int pol = fb + dims.obs_dim;
    ctx[pol + (refl->polarity == Polarity::kPositive ? 0 : 1)] = 1.0;
  }
}

inline void build_remainder_input(const PolicyDims& dims,
                                  std::span<const double> ctx,
                                  std::span<const int> strategy_tokens,
                                  int position, bool strategy_dropout,
                                  std::vector<double>& x) {
  x.assign(dims.rem_in(), 0.0);
  std::copy(ctx.begin(), ctx.end(), x.begin());
  if (!strategy_dropout) {
    for (size_t s = 0; s < strategy_tokens.size(); ++s)
      x[dims.ctx_dim() + s * dims.vocab + strategy_tokens[s]] = 1.0;
  }
  x[dims.ctx_dim() + dims.strategy_len * dims.vocab + position] = 1.0;
}

// ---------------------------------------------------------------------------
// Sequence evaluation and gradients
// ---------------------------------------------------------------------------

struct SeqLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

namespace detail {

// Walks every token of a trajectory in sampling order, rebuilding the exact
// head input each was drawn with, and hands (head, input, event) to `fn`.
template <typename Fn>
void for_each_token(const PolicyParams& p, const Trajectory& traj, Fn&& fn) {
  std::vector<double> ctx, x;
  std::vector<int> strat_tokens;
  for (const auto& step : traj.steps) {
    build_context(p.dims, step.obs,
                  step.reflection ? step.reflection : traj.reflection, ctx);
    strat_tokens.clear();
    for (const auto& ev : step.strategy) {
      fn(Head::kStrategy, std::span<const double>(ctx), ev);
      strat_tokens.push_back(ev.token);
    }
    for (size_t pos = 0; pos < step.remainder.size(); ++pos) {
      build_remainder_input(p.dims, ctx, strat_tokens, static_cast<int>(pos),
                            traj.strategy_dropout, x);
      fn(Head::kRemainder, std::span<const double>(x), step.remainder[pos]);
    }
  }
}

}  // namespace detail

inline SeqLogprob trajectory_logprob(const PolicyParams& p,
                                     const Trajectory& traj) {
  SeqLogprob out;
  std::vector<double> lg, lp;
  detail::for_each_token(p, traj, [&](Head h, std::span<const double> x,
                                      const TokenEvent& ev) {
    p.logits(h, x, lg);
    log_softmax(lg, ev.temperature, lp);
    out.per_token.push_back(lp[ev.token]);
    out.total += lp[ev.token];
  });
  return out;
}

// Accumulates sum_t coef[t] * d log pi(token_t) / dtheta into grad. With unit
// coefficients this is the gradient of trajectory_logprob().total.
inline void accumulate_trajectory_grad(const PolicyParams& p,
                                       const Trajectory& traj,
                                       std::span<const double> coefs,
                                       std::vector<double>& grad) {
  std::vector<double> lg, lp, cache, dlogits;
  size_t t = 0;
  detail::for_each_token(p, traj, [&](Head h, std::span<const double> x,
                                      const TokenEvent& ev) {
    double c = coefs.empty() ? 1.0 : coefs[t];
    ++t;
    if (c == 0.0) return;
    cache.clear();
    p.logits(h, x, lg, &cache);
    log_softmax(lg, ev.temperature, lp);
    dlogits.assign(lg.size(), 0.0);
    // d log softmax(z/tau)[k] / dz_j = (1[j=k] - p_j) / tau
    for (size_t v = 0; v < lg.size(); ++v)
      dlogits[v] = -c * std::exp(lp[v]) / ev.temperature;
    dlogits[ev.token] += c / ev.temperature;
    p.backprop(h, x, cache, dlogits, grad);
  });
}

// ---------------------------------------------------------------------------
// Checkpoint format: small header + flat little-endian f64 array.
// ---------------------------------------------------------------------------

inline void save_policy(const PolicyParams& p, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  const uint32_t magic = 0x53474550;  // "SGEP"
  const uint32_t version = 1;
  int32_t hdr[6] = {p.dims.vocab,        p.dims.obs_dim,
                    p.dims.horizon,      p.dims.strategy_len,
                    p.dims.remainder_len, p.dims.hidden};
  os.write(reinterpret_cast<const char*>(&magic), 4);
  os.write(reinterpret_cast<const char*>(&version), 4);
  os.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  os.write(reinterpret_cast<const char*>(&p.seed), 8);
  uint64_t n = p.theta.size();
  os.write(reinterpret_cast<const char*>(&n), 8);
  os.write(reinterpret_cast<const char*>(p.theta.data()), n * 8);
}

inline PolicyParams load_policy(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  uint32_t magic = 0, version = 0;
  is.read(reinterpret_cast<char*>(&magic), 4);
  is.read(reinterpret_cast<char*>(&version), 4);
  if (magic != 0x53474550 || version != 1)
    throw std::runtime_error("bad checkpoint header");
  int32_t hdr[6];
  is.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  PolicyParams p;
  p.dims.vocab = hdr[0];
  p.dims.obs_dim = hdr[1];
  p.dims.horizon = hdr[2];
  p.dims.strategy_len = hdr[3];
  p.dims.remainder_len = hdr[4];
  p.dims.hidden = hdr[5];
  is.read(reinterpret_cast<char*>(&p.seed), 8);
  uint64_t n = 0;
  is.read(reinterpret_cast<char*>(&n), 8);
  if (n != p.param_count()) throw std::runtime_error("bad checkpoint size");
  p.theta.resize(n);
  is.read(reinterpret_cast<char*>(p.theta.data()), n * 8);
  if (!is) throw std::runtime_error("truncated checkpoint");
  return p;
}

}  // namespace sgelab
