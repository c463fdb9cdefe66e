// SPDX-License-Identifier: Apache-2.0
#include "sbd/bilevel.hpp"

#include <algorithm>
#include <cmath>

#include "sbd/error.hpp"
#include "sbd/metrics.hpp"

namespace sbd {

namespace {

template <class T>
struct LossEval {
  T objective{0.0};
  std::vector<T> safety;
  std::vector<T> efficiency;
  std::vector<T> gradient;
};

// Weighted inner objective and (optionally) its gradient with respect to
// the policy parameters. With T = Dual and parameter tangent v, the tangent
// of `gradient` is the Hessian-vector product H v and the tangents of the
// per-sample losses are their directional derivatives along v.
template <class T>
LossEval<T> evaluate(const NetShape& shape, const T* params, const PreparedBatch& batch,
                     std::span<const double> lambda, const TrainingControls& ctl, double rho,
                     bool with_gradient) {
  const Eigen::Index n = static_cast<Eigen::Index>(shape.num_agents);
  const Eigen::Index B = batch.x.cols();
  if (batch.unsafe.rows() != n) throw ShapeError("batch agent count does not match the policy");
  if (static_cast<Eigen::Index>(lambda.size()) != B) throw ShapeError("one lambda per sample required");

  const Matrix<T> x = batch.x.template cast<T>();
  ForwardCache<T> cache;
  const Matrix<T> raw = forward_raw<T>(shape, params, x, with_gradient ? &cache : nullptr);
  const PolicyHead<T> head = policy_head<T>(raw, shape.num_agents);

  const double inv = 1.0 / static_cast<double>(B);
  LossEval<T> out;
  out.safety.resize(static_cast<std::size_t>(B));
  out.efficiency.resize(static_cast<std::size_t>(B));
  Matrix<T> d_probs;
  Eigen::Matrix<T, 1, Eigen::Dynamic> d_alpha;
  if (with_gradient) {
    d_probs.resize(n, B);
    d_alpha.resize(B);
  }

  for (Eigen::Index b = 0; b < B; ++b) {
    const double cap = batch.cap[static_cast<std::size_t>(b)];
    const double lam = lambda[static_cast<std::size_t>(b)];
    T alpha;
    bool passthrough = false;
    if (ctl.fixed_alpha) {
      alpha = T(std::min(*ctl.fixed_alpha, cap));
    } else if (value_of(head.alpha(b)) > cap) {
      alpha = T(cap);
    } else {
      alpha = head.alpha(b);
      passthrough = true;
    }
    T ls(0.0), le(0.0), slope(0.0);
    for (Eigen::Index a = 0; a < n; ++a) {
      const T p = head.probs(a, b);
      const double u = batch.unsafe(a, b), c0 = batch.cost0(a, b), c1 = batch.cost1(a, b);
      const T unsafe = u * alpha;
      const T cost = c0 + c1 * alpha;
      ls += p * unsafe;
      le += p * cost;
      if (with_gradient) {
        d_probs(a, b) = inv * (lam * unsafe + (1.0 - lam) * cost);
        slope += p * (lam * u + (1.0 - lam) * c1);
      }
    }
    out.safety[static_cast<std::size_t>(b)] = ls;
    out.efficiency[static_cast<std::size_t>(b)] = le;
    out.objective += inv * (lam * ls + (1.0 - lam) * le);
    if (with_gradient) d_alpha(b) = passthrough ? T(inv) * slope : T(0.0);
  }

  const std::size_t P = shape.parameter_count();
  if (rho != 0.0) {
    T sq(0.0);
    for (std::size_t i = 0; i < P; ++i) sq += params[i] * params[i];
    out.objective += 0.5 * rho * sq;
  }
  if (with_gradient) {
    out.gradient.assign(P, T(0.0));
    backward_raw<T>(shape, params, cache, policy_head_backward<T>(head, d_probs, d_alpha),
                    out.gradient.data(), nullptr);
    if (rho != 0.0)
      for (std::size_t i = 0; i < P; ++i) out.gradient[i] += rho * params[i];
  }
  return out;
}

// Accumulates the phi-gradient of sum_b d_lambda[b] * lambda_phi(x_b).
void backprop_lambda(const DenseNetParams& phi, const Matrix<double>& x, std::span<const double> d_lambda,
                     std::vector<double>& grad) {
  ForwardCache<double> cache;
  const Matrix<double> raw = forward_raw<double>(phi.shape, phi.values.data(), x, &cache);
  const auto lambda = meta_head<double>(raw);
  Eigen::Matrix<double, 1, Eigen::Dynamic> d(static_cast<Eigen::Index>(d_lambda.size()));
  for (std::size_t b = 0; b < d_lambda.size(); ++b) d(static_cast<Eigen::Index>(b)) = d_lambda[b];
  backward_raw<double>(phi.shape, phi.values.data(), cache, meta_head_backward<double>(lambda, d),
                       grad.data(), nullptr);
}

void check_finite(std::span<const double> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (!std::isfinite(v[i]))
      throw NumericError(std::string("non-finite ") + what + " at coordinate " + std::to_string(i));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

double mean(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

DecisionOptions decision_options(const TrainingControls& ctl) {
  DecisionOptions opt;
  opt.project = ctl.project;
  opt.fixed_alpha = ctl.fixed_alpha;
  return opt;
}

}  // namespace

std::string to_string(HypergradientMode mode) {
  return mode == HypergradientMode::FirstOrder ? "first-order" : "truncated-unroll";
}

HypergradientMode parse_mode(std::string_view text) {
  if (text == "first-order") return HypergradientMode::FirstOrder;
  if (text == "truncated-unroll") return HypergradientMode::TruncatedUnroll;
  throw InvalidArgument("unknown hypergradient mode '" + std::string(text) + "'");
}

void OptimizerConfig::validate() const {
  if (!(eta_out > 0.0) || !std::isfinite(eta_out)) throw InvalidArgument("eta_out must be positive");
  if (!(eta_in > 0.0) || !std::isfinite(eta_in)) throw InvalidArgument("eta_in must be positive");
  if (T_in < 1) throw InvalidArgument("T_in must be at least 1");
  if (batch < 1) throw InvalidArgument("batch must be at least 1");
  if (unroll_depth > T_in) throw InvalidArgument("unroll_depth must not exceed T_in");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay))
    throw InvalidArgument("weight_decay must be non-negative");
  if (width < 1) throw InvalidArgument("width must be positive");
  if (policy_depth < 1 || meta_depth < 1) throw InvalidArgument("network depth must be at least 1");
}

std::uint64_t run_key(const SyntheticEnvironment& env, std::uint64_t seed) {
  return stream_seed(seed, "run", env.config().seed);
}

NetShape policy_shape(const SyntheticEnvironment& env, const OptimizerConfig& cfg) {
  return {HeadKind::Policy, env.input_dim(), cfg.width, cfg.policy_depth, env.num_agents()};
}

NetShape meta_shape(const SyntheticEnvironment& env, const OptimizerConfig& cfg) {
  return {HeadKind::MetaWeight, env.input_dim(), cfg.width, cfg.meta_depth, 1};
}

TrainState initial_state(const SyntheticEnvironment& env, const OptimizerConfig& cfg) {
  const std::uint64_t key = run_key(env, cfg.seed);
  return {init_deterministic(meta_shape(env, cfg), stream_seed(key, "phi-init")),
          init_deterministic(policy_shape(env, cfg), stream_seed(key, "pi-init")), 0};
}

PreparedBatch prepare_batch(const SyntheticEnvironment& env, std::span<const EnvSample> batch, bool project) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const auto B = static_cast<Eigen::Index>(batch.size());
  const auto n = static_cast<Eigen::Index>(env.num_agents());
  PreparedBatch p;
  p.x.resize(static_cast<Eigen::Index>(env.input_dim()), B);
  p.unsafe.resize(n, B);
  p.cost0.resize(n, B);
  p.cost1.resize(n, B);
  p.cap.resize(batch.size());
  for (Eigen::Index b = 0; b < B; ++b) {
    const EnvSample& s = batch[static_cast<std::size_t>(b)];
    const auto x = encode_state(s.state, env.risk_scale());
    if (x.size() != env.input_dim()) throw ShapeError("state does not match the environment dimensions");
    for (std::size_t i = 0; i < x.size(); ++i) p.x(static_cast<Eigen::Index>(i), b) = x[i];
    for (Eigen::Index a = 0; a < n; ++a) {
      const AgentTerms t = env.terms(s.task, s.state, static_cast<std::size_t>(a));
      p.unsafe(a, b) = t.unsafe_slope;
      p.cost0(a, b) = t.cost_intercept;
      p.cost1(a, b) = t.cost_slope;
    }
    p.cap[static_cast<std::size_t>(b)] = project ? alpha_max(env.constraints(), s.state) : 1.0;
  }
  return p;
}

std::vector<double> meta_weights(const DenseNetParams& phi, const PreparedBatch& batch,
                                 const TrainingControls& ctl) {
  if (ctl.fixed_lambda) return std::vector<double>(batch.size(), *ctl.fixed_lambda);
  const auto lambda = meta_head<double>(forward_raw<double>(phi.shape, phi.values.data(), batch.x, nullptr));
  return {lambda.data(), lambda.data() + lambda.size()};
}

WeightedLoss weighted_loss(const DenseNetParams& pi, const PreparedBatch& batch, std::span<const double> lambda,
                           const TrainingControls& ctl, double weight_decay, bool with_gradient) {
  auto e = evaluate<double>(pi.shape, pi.values.data(), batch, lambda, ctl, weight_decay, with_gradient);
  WeightedLoss out;
  out.objective = e.objective;
  out.safety = mean(e.safety);
  out.efficiency = mean(e.efficiency);
  out.per_sample_safety = std::move(e.safety);
  out.per_sample_efficiency = std::move(e.efficiency);
  out.gradient = std::move(e.gradient);
  return out;
}

DenseNetParams inner_step(const DenseNetParams& pi, const DenseNetParams& phi, const SyntheticEnvironment& env,
                          std::span<const EnvSample> batch, const OptimizerConfig& cfg,
                          const TrainingControls& ctl, UnrollRecord* record) {
  if (batch.size() != cfg.batch)
    throw InvalidArgument("inner batch has " + std::to_string(batch.size()) + " samples, expected " +
                          std::to_string(cfg.batch));
  PreparedBatch prepared = prepare_batch(env, batch, ctl.project);
  std::vector<double> lambda = meta_weights(phi, prepared, ctl);
  const auto loss = weighted_loss(pi, prepared, lambda, ctl, cfg.weight_decay, true);
  check_finite(loss.gradient, "inner gradient");

  DenseNetParams next = pi;
  for (std::size_t i = 0; i < next.values.size(); ++i) next.values[i] -= cfg.eta_in * loss.gradient[i];
  if (record) *record = {pi.values, std::move(prepared), std::move(lambda)};
  return next;
}

InnerLoopResult inner_loop(const DenseNetParams& pi0, const DenseNetParams& phi, const SyntheticEnvironment& env,
                           const OptimizerConfig& cfg, const TrainingControls& ctl, Rng& stream,
                           std::span<const EnvSample> eval_batch, bool record_trace) {
  cfg.validate();
  const std::size_t K =
      cfg.mode == HypergradientMode::TruncatedUnroll && ctl.outer_updates ? cfg.unroll_depth : 0;

  std::optional<PreparedBatch> eval;
  std::vector<double> eval_lambda;
  if (record_trace && !eval_batch.empty()) {
    eval = prepare_batch(env, eval_batch, ctl.project);
    eval_lambda = meta_weights(phi, *eval, ctl);
  }

  std::vector<EnvSample> fixed;
  if (ctl.fixed_batch) fixed = env.sample(cfg.batch, stream);

  InnerLoopResult result{pi0, {}, {}};
  std::vector<std::vector<double>> iterates;
  std::vector<double> losses;
  auto snapshot = [&](const DenseNetParams& pi) {
    if (!record_trace) return;
    iterates.push_back(pi.values);
    losses.push_back(eval ? weighted_loss(pi, *eval, eval_lambda, ctl, cfg.weight_decay, false).objective : 0.0);
  };

  snapshot(result.pi);
  for (std::size_t k = 0; k < cfg.T_in; ++k) {
    std::vector<EnvSample> drawn;
    if (!ctl.fixed_batch) drawn = env.sample(cfg.batch, stream);
    const std::vector<EnvSample>& batch = ctl.fixed_batch ? fixed : drawn;
    if (k + K >= cfg.T_in) {
      UnrollRecord rec;
      result.pi = inner_step(result.pi, phi, env, batch, cfg, ctl, &rec);
      result.unroll.push_back(std::move(rec));
    } else {
      result.pi = inner_step(result.pi, phi, env, batch, cfg, ctl, nullptr);
    }
    snapshot(result.pi);
  }

  for (std::size_t t = 0; t < iterates.size(); ++t)
    result.trace.push_back({t, squared_distance(iterates[t], result.pi.values), losses[t]});
  return result;
}

Hypergradient hypergradient(const DenseNetParams& phi, const DenseNetParams& pi, const SyntheticEnvironment& env,
                            std::span<const EnvSample> meta_batch, std::span<const UnrollRecord> unroll,
                            const OptimizerConfig& cfg, const TrainingControls& ctl) {
  const PreparedBatch mb = prepare_batch(env, meta_batch, ctl.project);
  TrainingControls learned = ctl;
  learned.fixed_lambda.reset();
  const std::vector<double> lambda = meta_weights(phi, mb, learned);
  const std::vector<double> effective = ctl.fixed_lambda ? meta_weights(phi, mb, ctl) : lambda;

  const auto meta = weighted_loss(pi, mb, lambda, ctl, 0.0, true);
  Hypergradient out{{phi.shape, std::vector<double>(phi.values.size(), 0.0)}, 0.0, mean(effective)};
  const double inv = 1.0 / static_cast<double>(mb.size());
  std::vector<double> d_lambda(mb.size());
  for (std::size_t b = 0; b < mb.size(); ++b) {
    const double ls = meta.per_sample_safety[b], le = meta.per_sample_efficiency[b];
    out.meta_loss += inv * (effective[b] * ls + (1.0 - effective[b]) * le);
    d_lambda[b] = inv * (ls - le);
  }
  backprop_lambda(phi, mb.x, d_lambda, out.gradient.values);

  // Reverse pass through the recorded inner updates pi_{j+1} = pi_j - eta g_j(pi_j, lambda_j):
  //   dM/dlambda_j = -eta (d g_j / d lambda_j)^T v,   v <- v - eta H_j v.
  std::vector<double> v = meta.gradient;
  std::vector<Dual> dual_params;
  for (std::size_t j = unroll.size(); j-- > 0;) {
    const UnrollRecord& rec = unroll[j];
    dual_params.resize(rec.pi_before.size());
    for (std::size_t i = 0; i < dual_params.size(); ++i) dual_params[i] = Dual(rec.pi_before[i], v[i]);
    const auto e = evaluate<Dual>(pi.shape, dual_params.data(), rec.batch, rec.lambda, ctl, cfg.weight_decay, true);
    const double scale = -cfg.eta_in / static_cast<double>(rec.batch.size());
    std::vector<double> d_lam(rec.batch.size());
    for (std::size_t b = 0; b < d_lam.size(); ++b) d_lam[b] = scale * (e.safety[b].d - e.efficiency[b].d);
    backprop_lambda(phi, rec.batch.x, d_lam, out.gradient.values);
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= cfg.eta_in * e.gradient[i].d;
  }
  check_finite(out.gradient.values, "hypergradient");
  return out;
}

Hypergradient outer_step(TrainState& state, const SyntheticEnvironment& env, std::span<const EnvSample> meta_batch,
                         std::span<const UnrollRecord> unroll, const OptimizerConfig& cfg,
                         const TrainingControls& ctl) {
  Hypergradient hg = hypergradient(state.phi, state.pi, env, meta_batch, unroll, cfg, ctl);
  if (ctl.apply_outer_update && !ctl.fixed_lambda)
    for (std::size_t i = 0; i < state.phi.values.size(); ++i)
      state.phi.values[i] -= cfg.eta_out * hg.gradient.values[i];
  ++state.outer_step;
  return hg;
}

TrainResult train(const SyntheticEnvironment& env, const OptimizerConfig& cfg, const TrainingControls& ctl) {
  cfg.validate();
  return train_from(initial_state(env, cfg), env, cfg, ctl);
}

TrainResult train_from(TrainState state, const SyntheticEnvironment& env, const OptimizerConfig& cfg,
                       const TrainingControls& ctl) {
  cfg.validate();
  state.phi.validate();
  state.pi.validate();
  if (state.pi.shape != policy_shape(env, cfg) || state.phi.shape != meta_shape(env, cfg))
    throw ShapeError("initial networks do not match the environment and configuration");

  const std::uint64_t key = run_key(env, cfg.seed);
  Rng stream(key, "train");
  std::vector<EnvSample> trace_eval;
  if (cfg.trace_eval_size > 0) {
    Rng eval_stream(key, "trace-eval");
    trace_eval = env.sample(cfg.trace_eval_size, eval_stream);
  }
  std::optional<PreparedBatch> eval_prepared;
  const DecisionOptions opt = decision_options(ctl);

  TrainResult result{std::move(state), {}};
  TrainState& st = result.state;
  const std::size_t start = st.outer_step;
  for (std::size_t t = start; t < cfg.T_out; ++t) {
    const bool last = t + 1 == cfg.T_out;
    InnerLoopResult loop = inner_loop(st.pi, st.phi, env, cfg, ctl, stream, trace_eval, last);
    st.pi = std::move(loop.pi);

    OuterRecord rec;
    rec.outer_step = t + 1;
    if (ctl.outer_updates) {
      const auto meta_batch = env.sample(cfg.batch, stream);
      const Hypergradient hg = outer_step(st, env, meta_batch, loop.unroll, cfg, ctl);
      rec.meta_loss = hg.meta_loss;
      rec.mean_lambda = hg.mean_lambda;
    } else {
      ++st.outer_step;
      if (!trace_eval.empty()) {
        if (!eval_prepared) eval_prepared = prepare_batch(env, trace_eval, ctl.project);
        const auto lambda = meta_weights(st.phi, *eval_prepared, ctl);
        rec.meta_loss = weighted_loss(st.pi, *eval_prepared, lambda, ctl, 0.0, false).objective;
        rec.mean_lambda = mean(lambda);
      }
    }
    if (ctl.record_outer_metrics && !trace_eval.empty()) {
      const auto decisions = greedy_decisions(st.pi, env, trace_eval, opt);
      rec.sr = safety_rate(env.constraints(), trace_eval, decisions);
      rec.te = task_efficiency(env, trace_eval, decisions);
    }
    result.trace.outer.push_back(rec);
    if (last) result.trace.inner = std::move(loop.trace);
  }
  return result;
}

std::vector<double> projected_gradient_step(std::span<const double> x, std::span<const double> grad, double eta,
                                            double lo, double hi) {
  if (x.size() != grad.size()) throw ShapeError("point and gradient differ in length");
  if (lo > hi) throw InvalidArgument("empty projection box");
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] - eta * grad[i], lo, hi);
  return out;
}

}  // namespace sbd
