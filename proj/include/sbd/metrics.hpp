// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics (SR, TE, SEA, AE) and the ablation variants.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sbd/approximator.hpp"
#include "sbd/bilevel.hpp"
#include "sbd/core.hpp"
#include "sbd/environments.hpp"

namespace sbd {

// How a trained policy network is turned into decisions.
struct DecisionOptions {
  bool project = true;
  std::optional<double> fixed_alpha;
  bool discrete_alpha = false;  // alpha >= 0.5 -> 1 else 0; a clipped 1 falls back to 0
};

// Highest-probability agent, lowest index on exact ties.
DelegationDecision greedy(const PolicyOutput& out);

std::vector<DelegationDecision> greedy_decisions(const DenseNetParams& pi, const SyntheticEnvironment& env,
                                                 std::span<const EnvSample> eval, const DecisionOptions& opt);

// Stochastic policy outputs (agent distribution, alpha after the options).
std::vector<PolicyOutput> policy_outputs(const DenseNetParams& pi, const SyntheticEnvironment& env,
                                         std::span<const EnvSample> eval, const DecisionOptions& opt);

// Fraction of decisions accepted by is_safe. Throws on an empty set.
double safety_rate(const SafetyConstraintSet& c, std::span<const EnvSample> eval,
                   std::span<const DelegationDecision> decisions);
double safety_rate(const SafetyConstraintSet& c, const Policy& policy, std::span<const EnvSample> eval);

// Largest completion cost any decision can incur on the set:
// max over states and agents of max(retained_cost, c_mis * mismatch).
double max_achievable_cost(const SyntheticEnvironment& env, std::span<const EnvSample> eval);

// 1 - mean cost / max achievable cost, clamped to [0, 1].
double task_efficiency(const SyntheticEnvironment& env, std::span<const EnvSample> eval,
                       std::span<const DelegationDecision> decisions);
double task_efficiency(const SyntheticEnvironment& env, const Policy& policy, std::span<const EnvSample> eval);

// Mean of safety_probability over the set under the stochastic policy.
double mean_safety_probability(const DenseNetParams& pi, const SyntheticEnvironment& env,
                               std::span<const EnvSample> eval, const DecisionOptions& opt);

// Mean entropy (nats) of the principal-inclusive single-hop weights
// (1 - alpha, alpha) of the decisions.
double mean_accountability_entropy(std::span<const DelegationDecision> decisions);

struct ParetoPoint {
  double delta = 0.0;
  double sr = 0.0;
  double te = 0.0;
};

// Points not dominated by any other (>= in both, > in one); duplicates are
// collapsed. Sorted by TE ascending.
std::vector<ParetoPoint> pareto_front(std::span<const ParetoPoint> points);

// Trapezoidal area of SR over TE on the Pareto front; a single point gives
// SR * TE. Throws on empty input or repeated delta values.
double sea(std::span<const ParetoPoint> points);

inline const std::vector<double> kDefaultDeltas = {0.01, 0.05, 0.10, 0.20, 0.30};

// High-risk cap as a function of delta: linear from the preset cap at
// delta = 0.05 to 1 at delta = 0.30, extrapolated below 0.05, clamped to [0, 1].
double cap_for_delta(double preset_cap, double delta);
SyntheticDomainConfig with_delta(const SyntheticDomainConfig& cfg, double delta);

enum class Variant { FullSBD, FixedAlpha, NoOuter, FixedLambda, DiscreteAlpha, NoConstraint };

std::string to_string(Variant v);
Variant parse_variant(std::string_view text);
std::vector<Variant> all_variants();

struct VariantSpec {
  Variant variant = Variant::FullSBD;

  TrainingControls controls() const;
  DecisionOptions decisions() const;
};

struct VariantMetrics {
  double sr = 0.0;
  double te = 0.0;
  double sea = 0.0;
  double ae = 0.0;
};

struct VariantRun {
  Variant variant = Variant::FullSBD;
  VariantMetrics metrics;           // SR/TE/AE at the configuration's delta
  std::vector<ParetoPoint> points;  // one per swept delta
  TrainResult base;                 // training run at the configuration's delta
};

// Trains the variant once per delta (the configuration's own delta is
// always included) and evaluates on `eval_size` held-out states. Safety is
// judged against the unscaled constraint set of `domain`.
VariantRun run_variant(const VariantSpec& spec, const SyntheticDomainConfig& domain, const OptimizerConfig& cfg,
                       std::span<const double> deltas, std::size_t eval_size);

// Held-out evaluation states for a run; disjoint stream from training.
std::vector<EnvSample> evaluation_set(const SyntheticEnvironment& env, std::uint64_t seed, std::size_t size);

}  // namespace sbd
