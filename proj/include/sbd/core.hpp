// SPDX-License-Identifier: Apache-2.0
//
// Delegation primitives: states, tasks, decisions, the safety constraint set
// with its state-conditional alpha cap, and the expected safety/efficiency
// losses of a delegation policy.
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace sbd {

struct StateVector {
  std::vector<double> features;
  double risk = 0.0;               // severity / acuity / volatility proxy, >= 0
  std::vector<double> task_type;   // unit-norm specialty affinity

  // Throws InvalidArgument on non-finite entries, negative risk or a
  // task_type whose norm differs from 1 by more than 1e-9.
  void validate() const;
};

struct Task {
  std::uint64_t id = 0;
  double retained_cost = 1.0;  // cost borne by the principal at alpha = 0
};

struct EnvSample {
  StateVector state;
  Task task;
};

struct DelegationDecision {
  std::size_t agent = 0;
  double alpha = 0.0;

  void validate(std::size_t num_agents) const;
};

struct DecisionPredicate {
  std::string name;
  std::function<bool(const StateVector&, const DelegationDecision&)> accepts;
};

struct SafetyConstraintSet {
  double delta = 0.05;
  double risk_threshold = 0.0;
  double alpha_cap_highrisk = 1.0;
  double alpha_cap_routine = 1.0;
  std::vector<DecisionPredicate> extra_predicates;

  void validate() const;

  // Copy without the extra predicates (the cap component alone).
  SafetyConstraintSet cap_only() const;
};

// High-risk region is risk strictly above the threshold.
double alpha_max(const SafetyConstraintSet& c, const StateVector& s);

bool is_safe(const SafetyConstraintSet& c, const StateVector& s, const DelegationDecision& dec);

// Clips alpha to the state's cap. Extra predicates are not part of the
// projection.
double project_alpha(const SafetyConstraintSet& c, const StateVector& s, double alpha);

double inner_objective(double lambda, double safety_loss, double efficiency_loss);

// Analytic risk and cost models of an environment.
class DelegationModel {
 public:
  virtual ~DelegationModel() = default;
  virtual std::size_t num_agents() const = 0;
  virtual double unsafe_probability(const StateVector& s, std::size_t agent, double alpha) const = 0;
  virtual double completion_cost(const Task& task, const StateVector& s, std::size_t agent,
                                 double alpha) const = 0;
};

// A stochastic delegation policy evaluated at one state: a distribution over
// agents and the (already projected) delegation degree.
struct PolicyOutput {
  std::vector<double> agent_probs;
  double alpha = 0.0;
};

using Policy = std::function<PolicyOutput(const StateVector&)>;

// Mean over the batch of sum_a pi(a|s) p_unsafe(s, a, alpha(s)).
double safety_loss(const DelegationModel& model, const Policy& policy,
                   std::span<const EnvSample> batch);

// Mean over the batch of sum_a pi(a|s) C(task, a, alpha(s)).
double efficiency_loss(const DelegationModel& model, const Policy& policy,
                       std::span<const EnvSample> batch);

// 1 - sum_a pi(a|s) p_unsafe(s, a, alpha(s)).
double safety_probability(const DelegationModel& model, const Policy& policy, const StateVector& s);

// Network input for a state: features, risk / risk_scale, task_type.
std::vector<double> encode_state(const StateVector& s, double risk_scale);
std::size_t encoded_dim(std::size_t feature_dim, std::size_t task_dim);

}  // namespace sbd
