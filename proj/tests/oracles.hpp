// SPDX-License-Identifier: Apache-2.0
//
// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls the code path it checks.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sbd/approximator.hpp"
#include "sbd/bilevel.hpp"
#include "sbd/core.hpp"
#include "sbd/environments.hpp"
#include "sbd/rng.hpp"

namespace sbd::oracle {

// P(X > t) for log X ~ N(mu, sd^2).
inline double lognormal_tail(double mu, double sd, double t) {
  return 0.5 * std::erfc((std::log(t) - mu) / (sd * std::sqrt(2.0)));
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Finite-difference gradient check.

// Random quadratic loss on the head outputs of a network.
struct HeadLoss {
  std::vector<double> target;
  std::vector<double> weight;

  static std::vector<double> outputs(const NetOutput& o, HeadKind head) {
    if (head == HeadKind::MetaWeight) return {o.lambda};
    auto y = o.agent_probs;
    y.push_back(o.alpha);
    return y;
  }
  double value(const NetOutput& o, HeadKind head) const {
    const auto y = outputs(o, head);
    double v = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) v += weight[i] * (y[i] - target[i]) * (y[i] - target[i]);
    return v;
  }
  HeadCotangent cotangent(const NetOutput& o, HeadKind head) const {
    const auto y = outputs(o, head);
    HeadCotangent c;
    for (std::size_t i = 0; i < y.size(); ++i) {
      const double d = 2.0 * weight[i] * (y[i] - target[i]);
      if (head == HeadKind::MetaWeight)
        c.d_lambda = d;
      else if (i + 1 == y.size())
        c.d_alpha = d;
      else
        c.d_agent_probs.push_back(d);
    }
    return c;
  }
};

// Largest per-coordinate relative error between backward() and central
// differences (step 1e-5); the denominator is floored at 1e-6.
inline double fd_relative_error(const DenseNetParams& p, const std::vector<double>& x, const HeadLoss& loss) {
  const HeadKind head = p.shape.head;
  const auto g = backward(p, x, loss.cotangent(forward(p, x), head)).gradient.values;
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    DenseNetParams plus = p, minus = p;
    plus.values[i] += h;
    minus.values[i] -= h;
    const double fd = (loss.value(forward(plus, x), head) - loss.value(forward(minus, x), head)) / (2 * h);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-6}));
  }
  return worst;
}

// `trials` random (network, input, loss) triples; returns the worst error.
inline double random_gradient_checks(std::uint64_t seed, int trials) {
  Rng rng(seed, "gradient-check");
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const bool is_policy = t % 4 != 3;
    const std::size_t in = 3 + rng.below(5), width = 3 + rng.below(6), depth = 1 + rng.below(4);
    const NetShape s{is_policy ? HeadKind::Policy : HeadKind::MetaWeight, in, width, depth,
                     is_policy ? 2 + rng.below(3) : 2};
    const auto p = init_deterministic(s, rng.next_u64());
    std::vector<double> x(in);
    for (auto& v : x) v = rng.normal();
    HeadLoss loss;
    for (std::size_t i = 0; i < s.output_dim(); ++i) {
      loss.target.push_back(rng.uniform());
      loss.weight.push_back(rng.uniform(0.5, 2.0));
    }
    worst = std::max(worst, fd_relative_error(p, x, loss));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// One-inner-step hypergradient toy problem.
//
// Two agents with identical specialties make the agent distribution
// irrelevant to both losses, and single-layer networks make the policy's
// alpha head alpha = sigma(theta . x~) and the meta head
// lambda = sigma(v . x~) with x~ = (encoded state, 1). All states are
// routine with cap 1, so no clamp is active. Per sample:
//   ls = u alpha,  le = R + k alpha   (u, R, k from the analytic models)
// One inner step theta1 = theta - eta g with
//   g = 1/B sum_b [lambda_b u_b + (1 - lambda_b) k_b] alpha_b (1 - alpha_b) x~_b
// and the meta objective on the meta batch
//   M = 1/B' sum_c [lambda'_c ls'_c + (1 - lambda'_c) le'_c] evaluated at theta1.
// The chain rule then gives dM/dv as a direct term through lambda' plus the
// path through theta1(lambda_b).

struct ToyCase {
  SyntheticDomainConfig domain;
  OptimizerConfig cfg;
  DenseNetParams pi0;
  DenseNetParams phi;
  std::vector<EnvSample> batch;
  std::vector<EnvSample> meta;
};

inline SyntheticDomainConfig toy_domain() {
  SyntheticDomainConfig d;
  d.name = "toy-identical-agents";
  d.agents = {{"a", {1.0, 0.0}}, {"b", {1.0, 0.0}}};
  d.task_dim = 2;
  d.state_dim = 3;
  d.risk_log_mean = 0.0;
  d.risk_log_sd = 0.5;
  d.risk_threshold = 1e9;
  d.alpha_cap_highrisk = 1.0;
  d.alpha_cap_routine = 1.0;
  d.retained_cost_scale = 1.0;
  d.mismatch_cost_scale = 0.8;
  d.severity_saturation = 2.0;
  d.seed = 5;
  return d;
}

inline ToyCase make_toy_case(std::uint64_t seed) {
  ToyCase t;
  t.domain = toy_domain();
  t.cfg.width = 4;
  t.cfg.policy_depth = 1;
  t.cfg.meta_depth = 1;
  t.cfg.batch = 8;
  t.cfg.T_in = 1;
  t.cfg.T_out = 1;
  t.cfg.unroll_depth = 1;
  t.cfg.eta_in = 0.5;
  t.cfg.seed = seed;
  const SyntheticEnvironment env(t.domain);
  t.pi0 = init_deterministic(policy_shape(env, t.cfg), seed * 2 + 1);
  t.phi = init_deterministic(meta_shape(env, t.cfg), seed * 2 + 2);
  for (auto& v : t.pi0.values) v *= 2.0;
  for (auto& v : t.phi.values) v *= 2.0;
  Rng stream(seed, "toy-batches");
  t.batch = env.sample(t.cfg.batch, stream);
  t.meta = env.sample(t.cfg.batch, stream);
  return t;
}

struct ToyOracle {
  std::vector<double> theta1;    // alpha-head parameters after the inner step (weights..., bias)
  std::vector<double> gradient;  // dM/dv in the meta network's layout (weights..., bias)
  std::vector<double> first_order;  // direct term only
};

inline ToyOracle hand_hypergradient(const ToyCase& t) {
  const SyntheticEnvironment env(t.domain);
  const std::size_t in = env.input_dim();
  const std::size_t rows = env.num_agents() + 1;
  const std::size_t alpha_row = env.num_agents();

  auto features = [&](const EnvSample& e) {
    auto x = encode_state(e.state, env.risk_scale());
    x.push_back(1.0);
    return x;
  };
  std::vector<double> theta(in + 1), v(in + 1);
  for (std::size_t c = 0; c < in; ++c) theta[c] = t.pi0.values[alpha_row + rows * c];
  theta[in] = t.pi0.values[rows * in + alpha_row];
  for (std::size_t c = 0; c <= in; ++c) v[c] = t.phi.values[c];
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };

  struct Row {
    std::vector<double> x;
    double u, R, k, alpha, lambda;
  };
  auto rows_of = [&](const std::vector<EnvSample>& batch, const std::vector<double>& th) {
    std::vector<Row> out;
    for (const auto& e : batch) {
      const AgentTerms terms = env.terms(e.task, e.state, 0);
      Row r{features(e), terms.unsafe_slope, terms.cost_intercept, terms.cost_slope, 0.0, 0.0};
      r.alpha = logistic(dot(th, r.x));
      r.lambda = logistic(dot(v, r.x));
      out.push_back(std::move(r));
    }
    return out;
  };

  const double eta = t.cfg.eta_in;
  const auto inner = rows_of(t.batch, theta);
  const double B = static_cast<double>(inner.size());
  std::vector<double> g(in + 1, 0.0);
  for (const auto& r : inner) {
    const double coeff = (r.lambda * r.u + (1.0 - r.lambda) * r.k) * r.alpha * (1.0 - r.alpha) / B;
    for (std::size_t c = 0; c <= in; ++c) g[c] += coeff * r.x[c];
  }
  ToyOracle o;
  o.theta1.resize(in + 1);
  for (std::size_t c = 0; c <= in; ++c) o.theta1[c] = theta[c] - eta * g[c];

  const auto meta = rows_of(t.meta, o.theta1);
  const double Bm = static_cast<double>(meta.size());
  std::vector<double> dM_dtheta1(in + 1, 0.0);
  o.first_order.assign(in + 1, 0.0);
  for (const auto& r : meta) {
    const double dM_dlambda = (r.u * r.alpha - r.R - r.k * r.alpha) / Bm;
    for (std::size_t c = 0; c <= in; ++c) o.first_order[c] += dM_dlambda * r.lambda * (1.0 - r.lambda) * r.x[c];
    const double coeff = (r.lambda * r.u + (1.0 - r.lambda) * r.k) * r.alpha * (1.0 - r.alpha) / Bm;
    for (std::size_t c = 0; c <= in; ++c) dM_dtheta1[c] += coeff * r.x[c];
  }
  o.gradient = o.first_order;
  for (const auto& r : inner) {
    // d theta1 / d lambda_b = -eta / B (u_b - k_b) alpha_b (1 - alpha_b) x~_b
    const double s = -eta / B * (r.u - r.k) * r.alpha * (1.0 - r.alpha) * dot(dM_dtheta1, r.x);
    for (std::size_t c = 0; c <= in; ++c) o.gradient[c] += s * r.lambda * (1.0 - r.lambda) * r.x[c];
  }
  return o;
}

// Alpha-head parameters of a single-layer policy in the oracle's layout.
inline std::vector<double> alpha_head(const DenseNetParams& pi) {
  const std::size_t in = pi.shape.input_dim, rows = pi.shape.num_agents + 1, r = pi.shape.num_agents;
  std::vector<double> out(in + 1);
  for (std::size_t c = 0; c < in; ++c) out[c] = pi.values[r + rows * c];
  out[in] = pi.values[rows * in + r];
  return out;
}

}  // namespace sbd::oracle
