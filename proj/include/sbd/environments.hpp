// SPDX-License-Identifier: Apache-2.0
//
// Synthetic delegation environments with analytic risk and cost models.
//
//   mismatch(a, s)  = (1 - <specialty_a, s.task_type>) / 2
//   severity(s)     = min(s.risk / r_max, 1)
//   p_unsafe        = alpha * mismatch * severity
//   cost            = (1 - alpha) * retained_cost + alpha * c_mis * mismatch
//
// Both models are affine in alpha; AgentTerms carries the coefficients.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sbd/core.hpp"
#include "sbd/rng.hpp"

namespace sbd {

struct AgentSpec {
  std::string name;
  std::vector<double> specialty;  // unit norm, dimension task_dim
};

// Financial concentration limit on a synthetic portfolio. The blended
// portfolio holds (1 - alpha) of an equal-weight book over num_assets and
// alpha of the agent's strategy book, whose largest position is
// min(1, top_weight[agent] * (1 + feature_gain * |features[0]|)).
struct ConcentrationLimit {
  double limit = 0.10;
  std::size_t num_assets = 40;
  double feature_gain = 0.5;
  std::vector<double> top_weight;
};

double max_asset_weight(const ConcentrationLimit& c, const StateVector& s, const DelegationDecision& dec);

struct SyntheticDomainConfig {
  std::string name;
  std::vector<AgentSpec> agents;
  std::size_t task_dim = 0;
  std::size_t state_dim = 16;
  double risk_log_mean = 0.0;   // log-normal location of the risk channel
  double risk_log_sd = 1.0;
  double at_risk_probability = 0.0;  // > 0 selects the at-risk flag model
  double risk_threshold = 0.0;
  double alpha_cap_highrisk = 1.0;
  double alpha_cap_routine = 1.0;
  double delta = 0.05;
  double retained_cost_scale = 1.0;  // c_ret
  double mismatch_cost_scale = 1.0;  // c_mis
  double severity_saturation = 1.0; // r_max
  std::optional<ConcentrationLimit> concentration;
  std::uint64_t seed = 0;

  std::size_t num_agents() const { return agents.size(); }
  void validate() const;
};

inline constexpr std::string_view kRiskModelForm = "alpha*mismatch*severity/v1";

std::vector<std::string> preset_names();
// Throws InvalidArgument for an unknown name.
SyntheticDomainConfig preset(std::string_view name);

nlohmann::json to_json(const SyntheticDomainConfig& cfg);

double mismatch(const SyntheticDomainConfig& cfg, const StateVector& s, std::size_t agent);
double severity(const SyntheticDomainConfig& cfg, const StateVector& s);
double unsafe_probability(const SyntheticDomainConfig& cfg, const StateVector& s, std::size_t agent,
                          double alpha);
double completion_cost(const SyntheticDomainConfig& cfg, const Task& task, const StateVector& s,
                       std::size_t agent, double alpha);

// Throws InvalidArgument when size == 0.
std::vector<EnvSample> sample_batch(const SyntheticDomainConfig& cfg, std::size_t size, Rng& stream);

// Affine coefficients of the two models for one (state, agent):
//   p_unsafe(alpha) = unsafe_slope * alpha
//   cost(alpha)     = cost_intercept + cost_slope * alpha
struct AgentTerms {
  double unsafe_slope = 0.0;
  double cost_intercept = 0.0;
  double cost_slope = 0.0;
};

class SyntheticEnvironment final : public DelegationModel {
 public:
  explicit SyntheticEnvironment(SyntheticDomainConfig cfg);

  const SyntheticDomainConfig& config() const { return cfg_; }
  const SafetyConstraintSet& constraints() const { return constraints_; }
  double risk_scale() const { return cfg_.risk_threshold > 0.0 ? cfg_.risk_threshold : 1.0; }
  std::size_t input_dim() const { return encoded_dim(cfg_.state_dim, cfg_.task_dim); }

  std::size_t num_agents() const override { return cfg_.agents.size(); }
  double unsafe_probability(const StateVector& s, std::size_t agent, double alpha) const override;
  double completion_cost(const Task& task, const StateVector& s, std::size_t agent,
                         double alpha) const override;

  AgentTerms terms(const Task& task, const StateVector& s, std::size_t agent) const;
  std::vector<EnvSample> sample(std::size_t size, Rng& stream) const {
    return sample_batch(cfg_, size, stream);
  }

 private:
  SyntheticDomainConfig cfg_;
  SafetyConstraintSet constraints_;
};

}  // namespace sbd
