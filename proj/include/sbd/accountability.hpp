// SPDX-License-Identifier: Apache-2.0
//
// Accountability weights along a delegation chain alpha_1..alpha_k:
//
//   delegate-only:        w_j = (prod_{l<=j} alpha_l)(1 - alpha_{j+1}),  w_k = prod_l alpha_l
//   principal-inclusive:  w_0 = 1 - alpha_1 followed by the delegate-only weights
//
// The delegate-only weights telescope to alpha_1; adding w_0 makes them sum to 1.
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <json.hpp>

namespace sbd {

struct DelegationChain {
  std::vector<double> alphas;

  // Throws InvalidArgument on an empty chain or an entry outside [0, 1].
  void validate() const;
};

enum class WeightConvention { DelegateOnly, PrincipalInclusive };

struct AccountabilityWeights {
  WeightConvention convention = WeightConvention::PrincipalInclusive;
  std::vector<double> weights;
  double first_alpha = 0.0;  // partition target of the delegate-only convention
};

inline constexpr double kPartitionTolerance = 1e-12;
inline constexpr double kBoundTolerance = 1e-12;

AccountabilityWeights compute_weights(const DelegationChain& chain, WeightConvention convention);

// Sum equals 1 (principal-inclusive) or alpha_1 (delegate-only) within 1e-12.
bool verify_partition(const AccountabilityWeights& w);

// Partition check against an explicit target.
bool verify_partition(const AccountabilityWeights& w, double target);

struct BoundCheck {
  double max_weight = 0.0;  // delegate-only convention
  double bound = 0.0;       // 1 - (1 - max alpha)^k
};

BoundCheck bound_max_weight(const DelegationChain& chain);

// Bound used by the Monte Carlo checker; replaceable for mutation testing.
using BoundFunction = std::function<double(const DelegationChain&)>;
double proposition_bound(const DelegationChain& chain);

struct BoundReport {
  std::size_t num_chains = 0;
  std::vector<std::size_t> k_set;
  std::uint64_t seed = 0;
  std::size_t violations = 0;
  double max_observed_ratio = 0.0;  // max over chains of max_weight / bound

  nlohmann::json to_json() const;
};

// Samples chains with k drawn uniformly from k_set and alpha_l ~ U(0, 1);
// counts chains whose max delegate-only weight exceeds bound + 1e-12.
BoundReport monte_carlo_bound_check(std::size_t num_chains, const std::vector<std::size_t>& k_set,
                                    std::uint64_t seed, const BoundFunction& bound = proposition_bound);

// The chains monte_carlo_bound_check draws for the same arguments.
std::vector<DelegationChain> sample_chains(std::size_t num_chains, const std::vector<std::size_t>& k_set,
                                           std::uint64_t seed);

// -sum w ln w with 0 ln 0 = 0. Principal-inclusive weights only.
double accountability_entropy(const AccountabilityWeights& w);

}  // namespace sbd
