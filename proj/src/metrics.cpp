// SPDX-License-Identifier: Apache-2.0
#include "sbd/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sbd/accountability.hpp"
#include "sbd/error.hpp"

namespace sbd {

namespace {

void require_eval(std::span<const EnvSample> eval, std::size_t decisions) {
  if (eval.empty()) throw InvalidArgument("evaluation set is empty");
  if (decisions != eval.size()) throw ShapeError("one decision per evaluation state required");
}

double decision_alpha(double raw, double cap, const DecisionOptions& opt) {
  double alpha = opt.fixed_alpha ? *opt.fixed_alpha : raw;
  if (opt.discrete_alpha) {
    alpha = alpha >= 0.5 ? 1.0 : 0.0;
    if (opt.project && alpha > cap) alpha = 0.0;
    return alpha;
  }
  return opt.project ? std::min(alpha, cap) : alpha;
}

std::vector<DelegationDecision> greedy_all(const Policy& policy, std::span<const EnvSample> eval) {
  std::vector<DelegationDecision> out;
  out.reserve(eval.size());
  for (const auto& s : eval) out.push_back(greedy(policy(s.state)));
  return out;
}

}  // namespace

DelegationDecision greedy(const PolicyOutput& out) {
  if (out.agent_probs.empty()) throw InvalidArgument("policy output has no agents");
  std::size_t best = 0;
  for (std::size_t a = 1; a < out.agent_probs.size(); ++a)
    if (out.agent_probs[a] > out.agent_probs[best]) best = a;
  return {best, out.alpha};
}

std::vector<PolicyOutput> policy_outputs(const DenseNetParams& pi, const SyntheticEnvironment& env,
                                         std::span<const EnvSample> eval, const DecisionOptions& opt) {
  if (eval.empty()) throw InvalidArgument("evaluation set is empty");
  const PreparedBatch batch = prepare_batch(env, eval, opt.project);
  const auto head =
      policy_head<double>(forward_raw<double>(pi.shape, pi.values.data(), batch.x, nullptr), pi.shape.num_agents);
  std::vector<PolicyOutput> out(eval.size());
  for (std::size_t b = 0; b < eval.size(); ++b) {
    const auto col = static_cast<Eigen::Index>(b);
    out[b].agent_probs.assign(head.probs.col(col).data(), head.probs.col(col).data() + head.probs.rows());
    out[b].alpha = decision_alpha(head.alpha(col), batch.cap[b], opt);
  }
  return out;
}

std::vector<DelegationDecision> greedy_decisions(const DenseNetParams& pi, const SyntheticEnvironment& env,
                                                 std::span<const EnvSample> eval, const DecisionOptions& opt) {
  const auto outputs = policy_outputs(pi, env, eval, opt);
  std::vector<DelegationDecision> out;
  out.reserve(outputs.size());
  for (const auto& o : outputs) out.push_back(greedy(o));
  return out;
}

double safety_rate(const SafetyConstraintSet& c, std::span<const EnvSample> eval,
                   std::span<const DelegationDecision> decisions) {
  require_eval(eval, decisions.size());
  std::size_t safe = 0;
  for (std::size_t i = 0; i < eval.size(); ++i)
    if (is_safe(c, eval[i].state, decisions[i])) ++safe;
  return static_cast<double>(safe) / static_cast<double>(eval.size());
}

double safety_rate(const SafetyConstraintSet& c, const Policy& policy, std::span<const EnvSample> eval) {
  if (eval.empty()) throw InvalidArgument("evaluation set is empty");
  return safety_rate(c, eval, greedy_all(policy, eval));
}

double max_achievable_cost(const SyntheticEnvironment& env, std::span<const EnvSample> eval) {
  if (eval.empty()) throw InvalidArgument("evaluation set is empty");
  double worst = 0.0;
  for (const auto& s : eval)
    for (std::size_t a = 0; a < env.num_agents(); ++a)
      worst = std::max({worst, env.completion_cost(s.task, s.state, a, 0.0),
                        env.completion_cost(s.task, s.state, a, 1.0)});
  return worst;
}

double task_efficiency(const SyntheticEnvironment& env, std::span<const EnvSample> eval,
                       std::span<const DelegationDecision> decisions) {
  require_eval(eval, decisions.size());
  const double worst = max_achievable_cost(env, eval);
  if (!(worst > 0.0)) return 1.0;
  double total = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i)
    total += env.completion_cost(eval[i].task, eval[i].state, decisions[i].agent, decisions[i].alpha);
  const double mean = total / static_cast<double>(eval.size());
  return std::clamp(1.0 - mean / worst, 0.0, 1.0);
}

double task_efficiency(const SyntheticEnvironment& env, const Policy& policy, std::span<const EnvSample> eval) {
  if (eval.empty()) throw InvalidArgument("evaluation set is empty");
  return task_efficiency(env, eval, greedy_all(policy, eval));
}

double mean_safety_probability(const DenseNetParams& pi, const SyntheticEnvironment& env,
                               std::span<const EnvSample> eval, const DecisionOptions& opt) {
  const auto outputs = policy_outputs(pi, env, eval, opt);
  double total = 0.0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const PolicyOutput out = outputs[i];
    total += safety_probability(env, [&out](const StateVector&) { return out; }, eval[i].state);
  }
  return total / static_cast<double>(eval.size());
}

double mean_accountability_entropy(std::span<const DelegationDecision> decisions) {
  if (decisions.empty()) throw InvalidArgument("no decisions");
  double total = 0.0;
  for (const auto& d : decisions) {
    const double alpha = d.alpha;
    total += accountability_entropy(compute_weights(DelegationChain{{alpha}}, WeightConvention::PrincipalInclusive));
  }
  return total / static_cast<double>(decisions.size());
}

std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points) {
  std::vector<ParetoPoint> front;
  for (const auto& p : points) {
    bool dominated = false;
    for (const auto& q : points) {
      if (q.te >= p.te && q.sr >= p.sr && (q.te > p.te || q.sr > p.sr)) {
        dominated = true;
        break;
      }
    }
    if (dominated) continue;
    const bool duplicate = std::any_of(front.begin(), front.end(),
                                       [&](const ParetoPoint& f) { return f.te == p.te && f.sr == p.sr; });
    if (!duplicate) front.push_back(p);
  }
  std::sort(front.begin(), front.end(), [](const ParetoPoint& a, const ParetoPoint& b) { return a.te < b.te; });
  return front;
}

double sea(std::span<const ParetoPoint> points) {
  if (points.empty()) throw InvalidArgument("SEA needs at least one point");
  std::set<double> deltas;
  for (const auto& p : points) {
    if (!(p.sr >= 0.0 && p.sr <= 1.0 && p.te >= 0.0 && p.te <= 1.0))
      throw InvalidArgument("Pareto point outside [0, 1]");
    if (!deltas.insert(p.delta).second) throw InvalidArgument("repeated delta in the sweep");
  }
  const auto front = pareto_front(points);
  if (front.size() == 1) return front[0].sr * front[0].te;
  double area = 0.0;
  for (std::size_t i = 1; i < front.size(); ++i)
    area += 0.5 * (front[i].sr + front[i - 1].sr) * (front[i].te - front[i - 1].te);
  return area;
}

double cap_for_delta(double preset_cap, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
  return std::clamp(preset_cap + (1.0 - preset_cap) * (delta - 0.05) / 0.25, 0.0, 1.0);
}

SyntheticDomainConfig with_delta(const SyntheticDomainConfig& cfg, double delta) {
  SyntheticDomainConfig out = cfg;
  out.delta = delta;
  out.alpha_cap_highrisk = std::min(cap_for_delta(cfg.alpha_cap_highrisk, delta), cfg.alpha_cap_routine);
  return out;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::FullSBD: return "full-SBD";
    case Variant::FixedAlpha: return "fixed-alpha-0.5";
    case Variant::NoOuter: return "no-outer";
    case Variant::FixedLambda: return "fixed-lambda";
    case Variant::DiscreteAlpha: return "discrete-alpha";
    case Variant::NoConstraint: return "no-constraint";
  }
  return "unknown";
}

Variant parse_variant(std::string_view text) {
  for (Variant v : all_variants())
    if (to_string(v) == text) return v;
  throw InvalidArgument("unknown variant '" + std::string(text) + "'");
}

std::vector<Variant> all_variants() {
  return {Variant::FullSBD,     Variant::FixedAlpha,    Variant::NoOuter,
          Variant::FixedLambda, Variant::DiscreteAlpha, Variant::NoConstraint};
}

TrainingControls VariantSpec::controls() const {
  TrainingControls c;
  switch (variant) {
    case Variant::FullSBD:
    case Variant::DiscreteAlpha:
      break;
    case Variant::FixedAlpha:
      c.fixed_alpha = 0.5;
      break;
    case Variant::NoOuter:
      c.fixed_lambda = 0.5;
      c.outer_updates = false;
      break;
    case Variant::FixedLambda:
      c.fixed_lambda = 0.5;
      c.apply_outer_update = false;
      break;
    case Variant::NoConstraint:
      c.project = false;
      break;
  }
  return c;
}

DecisionOptions VariantSpec::decisions() const {
  DecisionOptions d;
  if (variant == Variant::FixedAlpha) d.fixed_alpha = 0.5;
  if (variant == Variant::DiscreteAlpha) d.discrete_alpha = true;
  if (variant == Variant::NoConstraint) d.project = false;
  return d;
}

std::vector<EnvSample> evaluation_set(const SyntheticEnvironment& env, std::uint64_t seed, std::size_t size) {
  Rng stream(run_key(env, seed), "eval");
  return env.sample(size, stream);
}

VariantRun run_variant(const VariantSpec& spec, const SyntheticDomainConfig& domain, const OptimizerConfig& cfg,
                       std::span<const double> deltas, std::size_t eval_size) {
  cfg.validate();
  const SyntheticEnvironment judge(domain);
  const auto eval = evaluation_set(judge, cfg.seed, eval_size);
  const TrainingControls ctl = spec.controls();
  const DecisionOptions opt = spec.decisions();

  VariantRun run;
  run.variant = spec.variant;
  auto evaluate_at = [&](double delta, TrainResult* keep) {
    const SyntheticEnvironment env(with_delta(domain, delta));
    TrainResult trained = train(env, cfg, ctl);
    const auto decisions = greedy_decisions(trained.state.pi, env, eval, opt);
    ParetoPoint p{delta, safety_rate(judge.constraints(), eval, decisions),
                  task_efficiency(judge, eval, decisions)};
    if (keep) {
      run.metrics.sr = p.sr;
      run.metrics.te = p.te;
      run.metrics.ae = mean_accountability_entropy(decisions);
      *keep = std::move(trained);
    }
    return p;
  };

  bool have_base = false;
  for (double delta : deltas) {
    const bool is_base = delta == domain.delta;
    run.points.push_back(evaluate_at(delta, is_base && !have_base ? &run.base : nullptr));
    have_base = have_base || is_base;
  }
  if (!have_base) {
    const ParetoPoint p = evaluate_at(domain.delta, &run.base);
    if (run.points.empty()) run.points.push_back(p);
  }
  run.metrics.sea = sea(run.points);
  return run;
}

}  // namespace sbd
