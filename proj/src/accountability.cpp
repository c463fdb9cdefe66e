// SPDX-License-Identifier: Apache-2.0
#include "sbd/accountability.hpp"

#include <algorithm>
#include <cmath>

#include "sbd/error.hpp"
#include "sbd/rng.hpp"

namespace sbd {

void DelegationChain::validate() const {
  if (alphas.empty()) throw InvalidArgument("delegation chain is empty");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw InvalidArgument("delegation degree outside [0, 1]");
}

AccountabilityWeights compute_weights(const DelegationChain& chain, WeightConvention convention) {
  chain.validate();
  const auto& a = chain.alphas;
  AccountabilityWeights w{convention, {}, a.front()};
  if (convention == WeightConvention::PrincipalInclusive) w.weights.push_back(1.0 - a.front());
  double prefix = 1.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    prefix *= a[j];
    w.weights.push_back(j + 1 < a.size() ? prefix * (1.0 - a[j + 1]) : prefix);
  }
  return w;
}

bool verify_partition(const AccountabilityWeights& w, double target) {
  double sum = 0.0;
  for (double x : w.weights) sum += x;
  return std::abs(sum - target) <= kPartitionTolerance;
}

bool verify_partition(const AccountabilityWeights& w) {
  return verify_partition(w, w.convention == WeightConvention::PrincipalInclusive ? 1.0 : w.first_alpha);
}

double proposition_bound(const DelegationChain& chain) {
  const double alpha_bar = *std::max_element(chain.alphas.begin(), chain.alphas.end());
  return 1.0 - std::pow(1.0 - alpha_bar, static_cast<double>(chain.alphas.size()));
}

BoundCheck bound_max_weight(const DelegationChain& chain) {
  const auto w = compute_weights(chain, WeightConvention::DelegateOnly);
  return {*std::max_element(w.weights.begin(), w.weights.end()), proposition_bound(chain)};
}

std::vector<DelegationChain> sample_chains(std::size_t num_chains, const std::vector<std::size_t>& k_set,
                                           std::uint64_t seed) {
  if (num_chains < 1) throw InvalidArgument("num_chains must be at least 1");
  if (k_set.empty()) throw InvalidArgument("k_set is empty");
  for (std::size_t k : k_set)
    if (k < 1) throw InvalidArgument("chain length must be at least 1");
  Rng rng(seed, "accountability-chains");
  std::vector<DelegationChain> chains(num_chains);
  for (auto& c : chains) {
    const std::size_t k = k_set[rng.below(k_set.size())];
    c.alphas.resize(k);
    for (double& a : c.alphas) a = rng.uniform();
  }
  return chains;
}

BoundReport monte_carlo_bound_check(std::size_t num_chains, const std::vector<std::size_t>& k_set,
                                    std::uint64_t seed, const BoundFunction& bound) {
  BoundReport report{num_chains, k_set, seed, 0, 0.0};
  for (const auto& chain : sample_chains(num_chains, k_set, seed)) {
    const auto w = compute_weights(chain, WeightConvention::DelegateOnly);
    const double max_w = *std::max_element(w.weights.begin(), w.weights.end());
    const double b = bound(chain);
    if (max_w > b + kBoundTolerance) ++report.violations;
    if (b > 0.0) report.max_observed_ratio = std::max(report.max_observed_ratio, max_w / b);
  }
  return report;
}

nlohmann::json BoundReport::to_json() const {
  return {{"num_chains", num_chains},
          {"k_set", k_set},
          {"seed", seed},
          {"violations", violations},
          {"max_observed_ratio", max_observed_ratio}};
}

double accountability_entropy(const AccountabilityWeights& w) {
  if (w.convention != WeightConvention::PrincipalInclusive)
    throw InvalidArgument("entropy needs principal-inclusive weights (delegate-only weights are not a distribution)");
  double h = 0.0;
  for (double x : w.weights) {
    if (x < 0.0) throw InvalidArgument("negative accountability weight");
    if (x > 0.0) h -= x * std::log(x);
  }
  return h;
}

}  // namespace sbd
