// SPDX-License-Identifier: Apache-2.0
//
// Theoretical validation protocol: safety monotonicity in lambda, linear
// convergence of the inner loop, the accountability bound and the ablation
// ordering, each producing a ValidationReport.
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sbd/accountability.hpp"
#include "sbd/bilevel.hpp"
#include "sbd/environments.hpp"
#include "sbd/io.hpp"
#include "sbd/metrics.hpp"

namespace sbd {

struct ValidationReport {
  std::string test;
  std::string statistic_name;
  double statistic = 0.0;
  double threshold = 0.0;
  bool pass = false;
  bool failed = false;  // the run itself could not be completed
  std::string failure;
  std::uint64_t seed = 0;
  std::string config_hash;
  nlohmann::json details = nlohmann::json::object();

  nlohmann::json to_json() const;
};

nlohmann::json reports_to_json(std::span<const ValidationReport> reports);
// Columns: test,statistic_name,statistic,threshold,pass
CsvTable summary_table(std::span<const ValidationReport> reports);

// Rank correlation with average ranks for ties. Throws on a length
// mismatch, fewer than two points or a constant argument.
double spearman(std::span<const double> xs, std::span<const double> ys);

// ---------------------------------------------------------------------------
// Convergence.

// f(x) = 1/2 (x - x*)^T H (x - x*) with H = diag(linspace(mu, L, dimension)),
// minimized by projected gradient descent on the box x <= cap from
// x0 = x* + e_0, a unit step along the mu eigendirection.
struct QuadraticSurrogate {
  std::size_t dimension = 2;
  double mu = 0.5;
  double L = 1.0;
  std::vector<double> optimum;  // empty means the origin
  std::optional<double> cap;

  void validate() const;
  std::vector<double> eigenvalues() const;
  std::vector<double> optimum_point() const;
  std::vector<double> start_point() const;
};

std::vector<double> surrogate_gradient(const QuadraticSurrogate& q, std::span<const double> x);
std::vector<double> surrogate_step(const QuadraticSurrogate& q, std::span<const double> x, double eta);
// |x_t - x*|^2 for t = 0..steps.
std::vector<double> surrogate_residuals(const QuadraticSurrogate& q, double eta, std::size_t steps);

inline constexpr double kResidualFloor = 1e-24;

// Least-squares fit of log(residual_sq) on the step index. The reported
// slope is that of the log residual (half the squared-residual slope), so a
// linear rate r per step gives slope log r.
struct LogResidualFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  std::size_t used = 0;
  std::size_t excluded = 0;  // residuals at or below kResidualFloor
};

// Throws InvalidArgument with fewer than 10 usable points.
LogResidualFit fit_log_residual(std::span<const double> residual_sq);

// Pass iff R^2 > threshold (0.95 for learned problems).
ValidationReport convergence_fit(std::span<const double> residual_sq, double threshold = 0.95);

// Surrogate run: pass iff R^2 > r2_threshold and the slope is within 5%
// relative of log(1 - eta mu).
ValidationReport surrogate_convergence(const QuadraticSurrogate& q, double eta, std::size_t steps = 100,
                                       double r2_threshold = 0.999);

struct SurrogateCase {
  std::string label;
  QuadraticSurrogate q;
  double eta = 1.0;
};

// (mu, L) in {(0.5, 1), (0.1, 1), (1, 1)} times eta in {1/L, 1/(2L)}.
std::vector<SurrogateCase> standard_surrogate_cases();

// Deterministic PGD with a ridge term so the inner objective is strongly
// convex; without it the logits drift to infinity and there is no finite
// minimizer to converge to.
struct LearnedConvergenceConfig {
  std::size_t steps = 400;
  double eta_in = 0.5;
  double weight_decay = 0.1;
  std::size_t batch = 256;
  double lambda = 0.5;
};

// One deterministic inner loop (fixed batch, fixed lambda) on a preset.
ValidationReport learned_convergence(const SyntheticDomainConfig& domain, const OptimizerConfig& cfg,
                                     const LearnedConvergenceConfig& lc);

// ---------------------------------------------------------------------------
// Monotonicity.

inline const std::vector<double> kDefaultLambdas = {0.1, 0.3, 0.5, 0.7, 0.9};

// Pass iff spearman(lambdas, p_safe) > 0.9. Details carry the values and
// whether the sequence is non-decreasing (its failure falsifies F3).
ValidationReport monotonicity_report(std::span<const double> lambdas, std::span<const double> p_safe);

// Sweeps `p_safe_at` over the lambdas; an exception at any lambda yields a
// report with the failure flag set.
ValidationReport monotonicity_sweep(const std::function<double(double)>& p_safe_at,
                                    std::span<const double> lambdas = kDefaultLambdas);

// Fixed-lambda training with the outer loop off; P(safe) is the mean
// safety probability on `eval_size` held-out states.
ValidationReport monotonicity_sweep(const SyntheticDomainConfig& domain, const OptimizerConfig& cfg,
                                    std::span<const double> lambdas = kDefaultLambdas,
                                    std::size_t eval_size = 2000);

// Scalar problem min_a lambda q a^2 + (1 - lambda) R (1 - a) over [0, cap]
// with P(safe) = 1 - q a^2.
struct ToyScalarProblem {
  double q = 1.0;
  double R = 1.0;
  double cap = 1.0;

  double closed_form_alpha(double lambda) const;
  double p_safe(double alpha) const { return 1.0 - q * alpha * alpha; }
  double solve(double lambda, double eta, std::size_t steps) const;
};

// ---------------------------------------------------------------------------
// Accountability and ablation.

ValidationReport accountability_validation(std::uint64_t seed, std::size_t num_chains = 10000,
                                           const std::vector<std::size_t>& k_set = {2, 3, 4, 5},
                                           const BoundFunction& bound = proposition_bound);

struct OrderingCheck {
  bool ordering = false;       // SEA(full) > SEA(fixed-lambda) > SEA(no-outer)
  bool f2_falsified = false;   // |SEA(no-outer) - SEA(full)| <= 1% of SEA(full)
};

OrderingCheck check_ordering(double sea_full, double sea_fixed_lambda, double sea_no_outer);

// Per-seed SEA of the three variants; the report carries means, the
// ordering truth value and the F2 flag. pass = ordering && !F2.
ValidationReport ablation_ordering(const SyntheticDomainConfig& domain, const OptimizerConfig& cfg,
                                   std::span<const std::uint64_t> seeds,
                                   std::span<const double> deltas = kDefaultDeltas, std::size_t eval_size = 2000);

}  // namespace sbd
