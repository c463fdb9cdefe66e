// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "sbd/core.hpp"
#include "sbd/error.hpp"
#include "sbd/rng.hpp"

namespace sbd {
namespace {

StateVector state_with_risk(double risk) {
  StateVector s;
  s.features = {0.0, 0.0};
  s.risk = risk;
  s.task_type = {1.0, 0.0};
  return s;
}

SafetyConstraintSet medical_caps() { return {0.05, 20.0, 0.70, 1.0, {}}; }

// Table-driven risk and cost model: p_unsafe(s, a, alpha) = slope[a] * alpha
// with the slope looked up by the state's first feature.
class TableModel : public DelegationModel {
 public:
  std::vector<std::vector<double>> unsafe_slope;  // [state][agent]
  std::vector<std::vector<double>> agent_cost;    // [state][agent]

  std::size_t num_agents() const override { return unsafe_slope.front().size(); }
  double unsafe_probability(const StateVector& s, std::size_t a, double alpha) const override {
    return unsafe_slope.at(index(s)).at(a) * alpha;
  }
  double completion_cost(const Task& t, const StateVector& s, std::size_t a, double alpha) const override {
    return (1.0 - alpha) * t.retained_cost + alpha * agent_cost.at(index(s)).at(a);
  }

 private:
  static std::size_t index(const StateVector& s) { return static_cast<std::size_t>(s.features.at(0)); }
};

EnvSample sample_at(std::size_t index) {
  EnvSample e;
  e.state = state_with_risk(1.0);
  e.state.features[0] = static_cast<double>(index);
  e.task.retained_cost = 1.0;
  return e;
}

Policy constant_policy(std::vector<double> probs, double alpha) {
  return [probs, alpha](const StateVector&) { return PolicyOutput{probs, alpha}; };
}

TEST(AlphaMax, HighRiskStateGetsHighRiskCap) { EXPECT_EQ(alpha_max(medical_caps(), state_with_risk(25)), 0.70); }

TEST(AlphaMax, RoutineStateGetsRoutineCap) { EXPECT_EQ(alpha_max(medical_caps(), state_with_risk(5)), 1.0); }

TEST(AlphaMax, ThresholdItselfIsRoutine) { EXPECT_EQ(alpha_max(medical_caps(), state_with_risk(20)), 1.0); }

TEST(IsSafe, AlphaAboveHighRiskCapIsUnsafe) {
  EXPECT_FALSE(is_safe(medical_caps(), state_with_risk(25), {0, 0.8}));
}

TEST(IsSafe, ZeroDelegationIsAlwaysSafe) {
  Rng rng(7);
  for (int i = 0; i < 100; ++i)
    EXPECT_TRUE(is_safe(medical_caps(), state_with_risk(rng.uniform(0, 100)), {0, 0.0}));
}

TEST(IsSafe, FailingPredicateMakesDecisionUnsafe) {
  auto c = medical_caps();
  c.extra_predicates.push_back({"reject-agent-1", [](const StateVector&, const DelegationDecision& d) {
                                  return d.agent != 1;
                                }});
  EXPECT_TRUE(is_safe(c, state_with_risk(5), {0, 0.5}));
  EXPECT_FALSE(is_safe(c, state_with_risk(5), {1, 0.5}));
}

TEST(ProjectAlpha, ClipsToCap) { EXPECT_EQ(project_alpha(medical_caps(), state_with_risk(25), 0.95), 0.70); }

TEST(ProjectAlpha, IdentityBelowCap) { EXPECT_EQ(project_alpha(medical_caps(), state_with_risk(5), 0.30), 0.30); }

TEST(ProjectAlpha, FixedPointAtCap) { EXPECT_EQ(project_alpha(medical_caps(), state_with_risk(25), 0.70), 0.70); }

TEST(ProjectAlpha, ProjectedDecisionIsSafeForRandomStates) {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    SafetyConstraintSet c{0.05, rng.uniform(0, 30), rng.uniform(0, 0.5), 0.0, {}};
    c.alpha_cap_routine = rng.uniform(c.alpha_cap_highrisk, 1.0);
    const auto s = state_with_risk(rng.uniform(0, 60));
    const double alpha = rng.uniform();
    ASSERT_TRUE(is_safe(c, s, {0, project_alpha(c, s, alpha)}));
  }
}

TEST(SafetyConstraintSet, RejectsInvalidFields) {
  EXPECT_THROW((SafetyConstraintSet{0.0, 1, 0.5, 1, {}}.validate()), InvalidArgument);
  EXPECT_THROW((SafetyConstraintSet{1.0, 1, 0.5, 1, {}}.validate()), InvalidArgument);
  EXPECT_THROW((SafetyConstraintSet{0.05, 1, 0.8, 0.5, {}}.validate()), InvalidArgument);
  EXPECT_THROW((SafetyConstraintSet{0.05, 1, -0.1, 0.5, {}}.validate()), InvalidArgument);
  EXPECT_NO_THROW(medical_caps().validate());
}

TEST(StateVector, Invariants) {
  auto s = state_with_risk(1.0);
  EXPECT_NO_THROW(s.validate());
  s.risk = -1;
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = state_with_risk(1.0);
  s.task_type = {0.6, 0.6};
  EXPECT_THROW(s.validate(), InvalidArgument);
  s = state_with_risk(1.0);
  s.features[1] = NAN;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(DelegationDecision, Invariants) {
  EXPECT_NO_THROW((DelegationDecision{1, 1.0}.validate(2)));
  EXPECT_THROW((DelegationDecision{2, 0.5}.validate(2)), InvalidArgument);
  EXPECT_THROW((DelegationDecision{0, 1.5}.validate(2)), InvalidArgument);
}

TEST(SafetyLoss, AllSafePolicyHasZeroLoss) {
  TableModel m;
  m.unsafe_slope = {{0.3, 0.4}};
  m.agent_cost = {{0.0, 0.0}};
  const std::vector<EnvSample> batch = {sample_at(0)};
  EXPECT_EQ(safety_loss(m, constant_policy({0.5, 0.5}, 0.0), batch), 0.0);
}

TEST(SafetyLoss, DeterministicPolicySingleState) {
  TableModel m;
  m.unsafe_slope = {{0.2, 0.9}};
  m.agent_cost = {{0.0, 0.0}};
  const std::vector<EnvSample> batch = {sample_at(0)};
  EXPECT_DOUBLE_EQ(safety_loss(m, constant_policy({1.0, 0.0}, 1.0), batch), 0.2);
}

TEST(SafetyLoss, MeanOverTwoStates) {
  TableModel m;
  m.unsafe_slope = {{0.1, 0.0}, {0.3, 0.0}};
  m.agent_cost = {{0.0, 0.0}, {0.0, 0.0}};
  const std::vector<EnvSample> batch = {sample_at(0), sample_at(1)};
  EXPECT_NEAR(safety_loss(m, constant_policy({1.0, 0.0}, 1.0), batch), 0.2, 1e-15);
}

TEST(SafetyLoss, EmptyBatchIsRejected) {
  TableModel m;
  m.unsafe_slope = {{0.1, 0.0}};
  m.agent_cost = {{0.0, 0.0}};
  EXPECT_THROW(safety_loss(m, constant_policy({1.0, 0.0}, 1.0), {}), InvalidArgument);
  EXPECT_THROW(efficiency_loss(m, constant_policy({1.0, 0.0}, 1.0), {}), InvalidArgument);
}

TEST(EfficiencyLoss, NoDelegationCostsRetainedCost) {
  TableModel m;
  m.unsafe_slope = {{0.1, 0.1}};
  m.agent_cost = {{0.3, 0.6}};
  const std::vector<EnvSample> batch = {sample_at(0)};
  EXPECT_EQ(efficiency_loss(m, constant_policy({0.5, 0.5}, 0.0), batch), 1.0);
}

TEST(EfficiencyLoss, PerfectAgentFullDelegationIsFree) {
  TableModel m;
  m.unsafe_slope = {{0.0, 0.0}};
  m.agent_cost = {{0.0, 0.6}};
  const std::vector<EnvSample> batch = {sample_at(0)};
  EXPECT_EQ(efficiency_loss(m, constant_policy({1.0, 0.0}, 1.0), batch), 0.0);
}

TEST(EfficiencyLoss, HalfDelegation) {
  TableModel m;
  m.unsafe_slope = {{0.0, 0.0}};
  m.agent_cost = {{0.4, 0.0}};
  const std::vector<EnvSample> batch = {sample_at(0)};
  // (1 - 0.5) * 1 + 0.5 * 0.4
  EXPECT_NEAR(efficiency_loss(m, constant_policy({1.0, 0.0}, 0.5), batch), 0.7, 1e-15);
}

TEST(InnerObjective, Examples) {
  EXPECT_EQ(inner_objective(1.0, 0.2, 0.9), 0.2);
  EXPECT_EQ(inner_objective(0.0, 0.2, 0.9), 0.9);
  EXPECT_NEAR(inner_objective(0.5, 0.2, 0.4), 0.3, 1e-15);
}

TEST(InnerObjective, MonotoneInEachLoss) {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double lam = rng.uniform(), ls = rng.uniform(), le = rng.uniform(), d = rng.uniform();
    if (lam > 0) {
      EXPECT_GE(inner_objective(lam, ls + d, le), inner_objective(lam, ls, le));
    }
    if (lam < 1) {
      EXPECT_GE(inner_objective(lam, ls, le + d), inner_objective(lam, ls, le));
    }
  }
}

TEST(SafetyProbability, Examples) {
  TableModel m;
  m.unsafe_slope = {{0.0, 0.1}, {0.05, 0.0}};
  m.agent_cost = {{0.0, 0.0}, {0.0, 0.0}};
  EXPECT_EQ(safety_probability(m, constant_policy({0.5, 0.5}, 0.0), sample_at(0).state), 1.0);
  EXPECT_NEAR(safety_probability(m, constant_policy({1.0, 0.0}, 1.0), sample_at(1).state), 0.95, 1e-15);
  EXPECT_NEAR(safety_probability(m, constant_policy({0.5, 0.5}, 1.0), sample_at(0).state), 0.95, 1e-15);
}

TEST(Losses, SafetyLossComplementsMeanSafetyProbability) {
  Rng rng(5);
  TableModel m;
  std::vector<EnvSample> batch;
  for (std::size_t i = 0; i < 50; ++i) {
    m.unsafe_slope.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    m.agent_cost.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    batch.push_back(sample_at(i));
  }
  const Policy policy = [](const StateVector& s) {
    const double f = s.features[0];
    const double a = 1.0 + std::sin(f), b = 1.0 + std::cos(f), c = 0.5;
    return PolicyOutput{{a / (a + b + c), b / (a + b + c), c / (a + b + c)}, 0.5 + 0.4 * std::sin(3 * f)};
  };
  double mean_p = 0.0;
  for (const auto& e : batch) mean_p += safety_probability(m, policy, e.state);
  mean_p /= static_cast<double>(batch.size());
  EXPECT_NEAR(safety_loss(m, policy, batch) + mean_p, 1.0, 1e-12);
}

TEST(Losses, InvariantUnderBatchPermutation) {
  Rng rng(9);
  TableModel m;
  std::vector<EnvSample> batch;
  for (std::size_t i = 0; i < 40; ++i) {
    m.unsafe_slope.push_back({rng.uniform(), rng.uniform()});
    m.agent_cost.push_back({rng.uniform(), rng.uniform()});
    auto e = sample_at(i);
    e.task.retained_cost = rng.uniform(0.5, 2.0);
    batch.push_back(e);
  }
  const Policy policy = [](const StateVector& s) {
    const double p = 0.5 + 0.4 * std::sin(s.features[0]);
    return PolicyOutput{{p, 1 - p}, 0.5 + 0.3 * std::cos(s.features[0])};
  };
  const double ls = safety_loss(m, policy, batch), le = efficiency_loss(m, policy, batch);
  auto shuffled = batch;
  std::reverse(shuffled.begin(), shuffled.end());
  std::rotate(shuffled.begin(), shuffled.begin() + 7, shuffled.end());
  EXPECT_NEAR(safety_loss(m, policy, shuffled), ls, 1e-14);
  EXPECT_NEAR(efficiency_loss(m, policy, shuffled), le, 1e-14);
}

TEST(EncodeState, LayoutAndScaling) {
  StateVector s;
  s.features = {1.0, -2.0};
  s.risk = 10.0;
  s.task_type = {0.0, 1.0, 0.0};
  const auto x = encode_state(s, 20.0);
  ASSERT_EQ(x.size(), encoded_dim(2, 3));
  EXPECT_EQ(x, (std::vector<double>{1.0, -2.0, 0.5, 0.0, 1.0, 0.0}));
}

TEST(Rng, StreamsAreDeterministicAndDistinct) {
  Rng a(42, "train"), b(42, "train"), c(42, "eval");
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, NormalMomentsAreStandard) {
  Rng rng(1);
  double sum = 0, sq = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.01);
}

}  // namespace
}  // namespace sbd
