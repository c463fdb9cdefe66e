// SPDX-License-Identifier: Apache-2.0
#include "sbd/core.hpp"

#include <algorithm>
#include <cmath>

#include "sbd/error.hpp"

namespace sbd {

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void require_batch(std::span<const EnvSample> batch) {
  if (batch.empty()) throw InvalidArgument("loss evaluation on an empty batch");
}

void require_distribution(const PolicyOutput& out, std::size_t n) {
  if (out.agent_probs.size() != n)
    throw ShapeError("policy returned " + std::to_string(out.agent_probs.size()) +
                     " agent probabilities for " + std::to_string(n) + " agents");
}

}  // namespace

void StateVector::validate() const {
  if (!all_finite(features) || !all_finite(task_type) || !std::isfinite(risk))
    throw InvalidArgument("state has non-finite entries");
  if (risk < 0.0) throw InvalidArgument("state risk must be non-negative");
  double sq = 0.0;
  for (double x : task_type) sq += x * x;
  if (std::abs(std::sqrt(sq) - 1.0) > 1e-9) throw InvalidArgument("task_type must have unit norm");
}

void DelegationDecision::validate(std::size_t num_agents) const {
  if (agent >= num_agents) throw InvalidArgument("decision agent index out of range");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("decision alpha outside [0, 1]");
}

void SafetyConstraintSet::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("delta must lie in (0, 1)");
  auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
  if (!in_unit(alpha_cap_highrisk) || !in_unit(alpha_cap_routine))
    throw InvalidArgument("alpha caps must lie in [0, 1]");
  if (alpha_cap_highrisk > alpha_cap_routine)
    throw InvalidArgument("high-risk cap exceeds routine cap");
  if (!std::isfinite(risk_threshold)) throw InvalidArgument("risk threshold must be finite");
}

SafetyConstraintSet SafetyConstraintSet::cap_only() const {
  SafetyConstraintSet c = *this;
  c.extra_predicates.clear();
  return c;
}

double alpha_max(const SafetyConstraintSet& c, const StateVector& s) {
  return s.risk > c.risk_threshold ? c.alpha_cap_highrisk : c.alpha_cap_routine;
}

bool is_safe(const SafetyConstraintSet& c, const StateVector& s, const DelegationDecision& dec) {
  if (dec.alpha > alpha_max(c, s)) return false;
  for (const auto& p : c.extra_predicates)
    if (!p.accepts(s, dec)) return false;
  return true;
}

double project_alpha(const SafetyConstraintSet& c, const StateVector& s, double alpha) {
  return std::min(alpha, alpha_max(c, s));
}

double inner_objective(double lambda, double safety_loss, double efficiency_loss) {
  return lambda * safety_loss + (1.0 - lambda) * efficiency_loss;
}

double safety_loss(const DelegationModel& model, const Policy& policy,
                   std::span<const EnvSample> batch) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& sample : batch) total += 1.0 - safety_probability(model, policy, sample.state);
  return total / static_cast<double>(batch.size());
}

double efficiency_loss(const DelegationModel& model, const Policy& policy,
                       std::span<const EnvSample> batch) {
  require_batch(batch);
  const std::size_t n = model.num_agents();
  double total = 0.0;
  for (const auto& sample : batch) {
    const PolicyOutput out = policy(sample.state);
    require_distribution(out, n);
    double expected = 0.0;
    for (std::size_t a = 0; a < n; ++a)
      expected += out.agent_probs[a] * model.completion_cost(sample.task, sample.state, a, out.alpha);
    total += expected;
  }
  return total / static_cast<double>(batch.size());
}

double safety_probability(const DelegationModel& model, const Policy& policy, const StateVector& s) {
  const std::size_t n = model.num_agents();
  const PolicyOutput out = policy(s);
  require_distribution(out, n);
  double unsafe = 0.0;
  for (std::size_t a = 0; a < n; ++a)
    unsafe += out.agent_probs[a] * model.unsafe_probability(s, a, out.alpha);
  return 1.0 - unsafe;
}

std::size_t encoded_dim(std::size_t feature_dim, std::size_t task_dim) {
  return feature_dim + 1 + task_dim;
}

std::vector<double> encode_state(const StateVector& s, double risk_scale) {
  std::vector<double> x;
  x.reserve(encoded_dim(s.features.size(), s.task_type.size()));
  x.insert(x.end(), s.features.begin(), s.features.end());
  x.push_back(s.risk / risk_scale);
  x.insert(x.end(), s.task_type.begin(), s.task_type.end());
  return x;
}

}  // namespace sbd
