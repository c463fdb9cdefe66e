// SPDX-License-Identifier: Apache-2.0
#include "sbd/environments.hpp"

#include <algorithm>
#include <cmath>

#include "sbd/error.hpp"

namespace sbd {

namespace {

std::vector<double> axis(std::size_t dim, std::size_t i) {
  std::vector<double> v(dim, 0.0);
  v[i] = 1.0;
  return v;
}

std::vector<double> diagonal(std::size_t dim) {
  return std::vector<double>(dim, 1.0 / std::sqrt(static_cast<double>(dim)));
}

SyntheticDomainConfig medical() {
  SyntheticDomainConfig c;
  c.name = "medical-like";
  c.task_dim = 4;
  c.agents = {{"cardiology", axis(4, 0)},
              {"pulmonology", axis(4, 1)},
              {"nephrology", axis(4, 2)},
              {"general", diagonal(4)}};
  c.risk_log_mean = std::log(14.0);
  c.risk_log_sd = 0.5;
  c.risk_threshold = 20.0;  // APACHE-II proxy
  c.alpha_cap_highrisk = 0.70;
  c.severity_saturation = 40.0;
  c.retained_cost_scale = 1.0;
  c.mismatch_cost_scale = 0.8;
  return c;
}

SyntheticDomainConfig financial() {
  SyntheticDomainConfig c;
  c.name = "financial-like";
  c.task_dim = 3;
  c.agents = {{"momentum", axis(3, 0)}, {"mean-reversion", axis(3, 1)}, {"risk-parity", axis(3, 2)}};
  c.risk_log_mean = std::log(18.0);
  c.risk_log_sd = 0.45;
  c.risk_threshold = 25.0;  // annualized volatility, percent
  c.alpha_cap_highrisk = 0.80;
  c.severity_saturation = 60.0;
  c.retained_cost_scale = 1.0;
  c.mismatch_cost_scale = 0.9;
  c.concentration = ConcentrationLimit{0.10, 40, 0.5, {0.09, 0.09, 0.035}};
  return c;
}

SyntheticDomainConfig educational() {
  SyntheticDomainConfig c;
  c.name = "educational-like";
  c.task_dim = 3;
  c.agents = {{"worked-examples", axis(3, 0)},
              {"practice-problems", axis(3, 1)},
              {"conceptual-explanation", axis(3, 2)}};
  c.risk_log_mean = std::log(0.5);
  c.risk_log_sd = 0.5;
  c.at_risk_probability = 0.2;
  c.risk_threshold = 1.0;  // at-risk flag forces risk above this
  c.alpha_cap_highrisk = 0.60;
  c.severity_saturation = 2.0;
  c.retained_cost_scale = 1.0;
  c.mismatch_cost_scale = 0.7;
  return c;
}

}  // namespace

double max_asset_weight(const ConcentrationLimit& c, const StateVector& s, const DelegationDecision& dec) {
  const double gain = s.features.empty() ? 1.0 : 1.0 + c.feature_gain * std::abs(s.features[0]);
  const double top = std::min(1.0, c.top_weight.at(dec.agent) * gain);
  const double equal = 1.0 / static_cast<double>(c.num_assets);
  return (1.0 - dec.alpha) * equal + dec.alpha * std::max(top, equal);
}

void SyntheticDomainConfig::validate() const {
  if (agents.size() < 2) throw InvalidArgument(name + ": at least two agents are required");
  if (task_dim == 0) throw InvalidArgument(name + ": task dimension must be positive");
  for (const auto& a : agents) {
    if (a.specialty.size() != task_dim)
      throw InvalidArgument(name + ": specialty of '" + a.name + "' has the wrong dimension");
    double sq = 0.0;
    for (double x : a.specialty) sq += x * x;
    if (std::abs(std::sqrt(sq) - 1.0) > 1e-9)
      throw InvalidArgument(name + ": specialty of '" + a.name + "' is not unit norm");
  }
  if (!(severity_saturation > 0.0)) throw InvalidArgument(name + ": r_max must be positive");
  if (!(risk_log_sd > 0.0)) throw InvalidArgument(name + ": risk log-sd must be positive");
  if (!(retained_cost_scale > 0.0) || !(mismatch_cost_scale >= 0.0))
    throw InvalidArgument(name + ": cost scales must be positive");
  if (at_risk_probability < 0.0 || at_risk_probability > 1.0)
    throw InvalidArgument(name + ": at-risk probability outside [0, 1]");
  if (concentration && concentration->top_weight.size() != agents.size())
    throw InvalidArgument(name + ": concentration limit needs one top weight per agent");
  SafetyConstraintSet c{delta, risk_threshold, alpha_cap_highrisk, alpha_cap_routine, {}};
  c.validate();
}

std::vector<std::string> preset_names() { return {"medical-like", "financial-like", "educational-like"}; }

SyntheticDomainConfig preset(std::string_view name) {
  if (name == "medical-like") return medical();
  if (name == "financial-like") return financial();
  if (name == "educational-like") return educational();
  throw InvalidArgument("unknown domain preset '" + std::string(name) + "'");
}

nlohmann::json to_json(const SyntheticDomainConfig& cfg) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : cfg.agents) agents.push_back({{"name", a.name}, {"specialty", a.specialty}});
  nlohmann::json j = {
      {"name", cfg.name},
      {"agents", agents},
      {"task_dim", cfg.task_dim},
      {"state_dim", cfg.state_dim},
      {"risk_log_mean", cfg.risk_log_mean},
      {"risk_log_sd", cfg.risk_log_sd},
      {"at_risk_probability", cfg.at_risk_probability},
      {"risk_threshold", cfg.risk_threshold},
      {"alpha_cap_highrisk", cfg.alpha_cap_highrisk},
      {"alpha_cap_routine", cfg.alpha_cap_routine},
      {"delta", cfg.delta},
      {"retained_cost_scale", cfg.retained_cost_scale},
      {"mismatch_cost_scale", cfg.mismatch_cost_scale},
      {"severity_saturation", cfg.severity_saturation},
      {"risk_model_form", std::string(kRiskModelForm)},
      {"seed", cfg.seed},
  };
  if (cfg.concentration) {
    const auto& c = *cfg.concentration;
    j["concentration_limit"] = {{"limit", c.limit},
                                {"num_assets", c.num_assets},
                                {"feature_gain", c.feature_gain},
                                {"top_weight", c.top_weight}};
  } else {
    j["concentration_limit"] = nullptr;
  }
  return j;
}

double mismatch(const SyntheticDomainConfig& cfg, const StateVector& s, std::size_t agent) {
  const auto& spec = cfg.agents.at(agent).specialty;
  if (spec.size() != s.task_type.size()) throw ShapeError("task_type dimension does not match the domain");
  double dot = 0.0;
  for (std::size_t i = 0; i < spec.size(); ++i) dot += spec[i] * s.task_type[i];
  return std::clamp(0.5 * (1.0 - dot), 0.0, 1.0);
}

double severity(const SyntheticDomainConfig& cfg, const StateVector& s) {
  return std::min(s.risk / cfg.severity_saturation, 1.0);
}

double unsafe_probability(const SyntheticDomainConfig& cfg, const StateVector& s, std::size_t agent,
                          double alpha) {
  return alpha * mismatch(cfg, s, agent) * severity(cfg, s);
}

double completion_cost(const SyntheticDomainConfig& cfg, const Task& task, const StateVector& s,
                       std::size_t agent, double alpha) {
  return (1.0 - alpha) * task.retained_cost + alpha * cfg.mismatch_cost_scale * mismatch(cfg, s, agent);
}

std::vector<EnvSample> sample_batch(const SyntheticDomainConfig& cfg, std::size_t size, Rng& stream) {
  if (size == 0) throw InvalidArgument("sample_batch: empty batch requested");
  std::vector<EnvSample> batch(size);
  for (auto& sample : batch) {
    StateVector& s = sample.state;
    s.features.resize(cfg.state_dim);
    for (double& f : s.features) f = stream.normal();

    const double base = std::exp(cfg.risk_log_mean + cfg.risk_log_sd * stream.normal());
    if (cfg.at_risk_probability > 0.0) {
      const bool at_risk = stream.bernoulli(cfg.at_risk_probability);
      s.risk = at_risk ? cfg.risk_threshold + base : std::min(base, cfg.risk_threshold);
    } else {
      s.risk = base;
    }

    s.task_type.resize(cfg.task_dim);
    double sq = 0.0;
    do {
      sq = 0.0;
      for (double& t : s.task_type) {
        t = stream.normal();
        sq += t * t;
      }
    } while (sq < 1e-24);
    const double inv = 1.0 / std::sqrt(sq);
    for (double& t : s.task_type) t *= inv;

    sample.task.id = stream.next_u64();
    sample.task.retained_cost = cfg.retained_cost_scale * stream.uniform(0.75, 1.25);
  }
  return batch;
}

SyntheticEnvironment::SyntheticEnvironment(SyntheticDomainConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  constraints_.delta = cfg_.delta;
  constraints_.risk_threshold = cfg_.risk_threshold;
  constraints_.alpha_cap_highrisk = cfg_.alpha_cap_highrisk;
  constraints_.alpha_cap_routine = cfg_.alpha_cap_routine;
  if (cfg_.concentration) {
    const ConcentrationLimit limit = *cfg_.concentration;
    constraints_.extra_predicates.push_back(
        {"concentration-limit", [limit](const StateVector& s, const DelegationDecision& d) {
           return max_asset_weight(limit, s, d) <= limit.limit;
         }});
  }
}

double SyntheticEnvironment::unsafe_probability(const StateVector& s, std::size_t agent, double alpha) const {
  return sbd::unsafe_probability(cfg_, s, agent, alpha);
}

double SyntheticEnvironment::completion_cost(const Task& task, const StateVector& s, std::size_t agent,
                                             double alpha) const {
  return sbd::completion_cost(cfg_, task, s, agent, alpha);
}

AgentTerms SyntheticEnvironment::terms(const Task& task, const StateVector& s, std::size_t agent) const {
  const double m = mismatch(cfg_, s, agent);
  return {m * severity(cfg_, s), task.retained_cost, cfg_.mismatch_cost_scale * m - task.retained_cost};
}

}  // namespace sbd
