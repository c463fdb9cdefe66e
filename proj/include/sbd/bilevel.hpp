// SPDX-License-Identifier: Apache-2.0
//
// Bilevel training of the delegation policy pi and the meta-weight network
// phi. The inner loop runs projected gradient descent on
//
//   (1/B) sum_b [ lambda_b Ls_b(pi) + (1 - lambda_b) Le_b(pi) ] + (rho/2)|pi|^2
//
// with lambda_b = lambda_phi(s_b) held constant. The outer step descends the
// same weighted objective on a fresh meta-batch with respect to phi, either
// through lambda alone (first-order) or additionally through the last K
// inner updates (truncated unroll). Unrolled steps use exact Hessian-vector
// products obtained by running the reverse pass on Dual parameters.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sbd/approximator.hpp"
#include "sbd/environments.hpp"
#include "sbd/rng.hpp"

namespace sbd {

enum class HypergradientMode { FirstOrder, TruncatedUnroll };

std::string to_string(HypergradientMode mode);
// Accepts "first-order" and "truncated-unroll".
HypergradientMode parse_mode(std::string_view text);

struct OptimizerConfig {
  double eta_out = 1e-3;
  double eta_in = 5e-4;
  std::size_t T_out = 500;
  std::size_t T_in = 50;
  std::size_t batch = 256;
  std::size_t unroll_depth = 5;  // K
  HypergradientMode mode = HypergradientMode::TruncatedUnroll;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;  // rho
  std::size_t width = 32;
  std::size_t policy_depth = 4;
  std::size_t meta_depth = 3;
  std::size_t trace_eval_size = 512;  // held-out states for the outer SR/TE trace

  void validate() const;
};

// Behaviour switches used by the ablation variants and the fixed-lambda
// validation protocol.
struct TrainingControls {
  std::optional<double> fixed_lambda;  // overrides lambda_phi everywhere
  bool outer_updates = true;           // run phase 2 at all
  bool apply_outer_update = true;      // false: hypergradient computed and discarded
  bool project = true;                 // clip alpha to the state's cap
  std::optional<double> fixed_alpha;   // constant (projected) alpha
  bool fixed_batch = false;            // one batch per inner loop (deterministic PGD)
  bool record_outer_metrics = true;
};

struct TrainState {
  DenseNetParams phi;
  DenseNetParams pi;
  std::size_t outer_step = 0;
};

struct InnerRecord {
  std::size_t step = 0;
  double residual_sq = 0.0;  // |pi_t - pi_T|^2 against the loop's final iterate
  double inner_loss = 0.0;   // weighted objective on the fixed evaluation batch
};

struct OuterRecord {
  std::size_t outer_step = 0;
  double meta_loss = 0.0;
  double mean_lambda = 0.0;
  double sr = 0.0;
  double te = 0.0;
};

struct ConvergenceTrace {
  std::vector<InnerRecord> inner;  // last inner loop
  std::vector<OuterRecord> outer;
};

NetShape policy_shape(const SyntheticEnvironment& env, const OptimizerConfig& cfg);
NetShape meta_shape(const SyntheticEnvironment& env, const OptimizerConfig& cfg);
TrainState initial_state(const SyntheticEnvironment& env, const OptimizerConfig& cfg);

// Batch in network form: inputs plus the affine risk and cost coefficients
// of every (agent, sample) pair and the projection cap of every sample.
struct PreparedBatch {
  Matrix<double> x;       // input_dim x B
  Matrix<double> unsafe;  // n x B
  Matrix<double> cost0;   // n x B
  Matrix<double> cost1;   // n x B
  std::vector<double> cap;

  std::size_t size() const { return static_cast<std::size_t>(x.cols()); }
};

PreparedBatch prepare_batch(const SyntheticEnvironment& env, std::span<const EnvSample> batch, bool project);

// lambda_phi on every column of the batch, or the fixed override.
std::vector<double> meta_weights(const DenseNetParams& phi, const PreparedBatch& batch,
                                 const TrainingControls& ctl);

// Weighted objective on a prepared batch with per-sample lambda.
struct WeightedLoss {
  double objective = 0.0;  // includes the ridge term
  double safety = 0.0;     // mean Ls_b
  double efficiency = 0.0; // mean Le_b
  std::vector<double> per_sample_safety;
  std::vector<double> per_sample_efficiency;
  std::vector<double> gradient;  // d objective / d pi; empty unless requested
};

WeightedLoss weighted_loss(const DenseNetParams& pi, const PreparedBatch& batch,
                           std::span<const double> lambda, const TrainingControls& ctl,
                           double weight_decay, bool with_gradient);

// Everything the unroll needs about one inner update.
struct UnrollRecord {
  std::vector<double> pi_before;
  PreparedBatch batch;
  std::vector<double> lambda;
};

// pi' = pi - eta_in * grad. `batch` must hold exactly cfg.batch samples.
// Throws NumericError on a non-finite gradient.
DenseNetParams inner_step(const DenseNetParams& pi, const DenseNetParams& phi,
                          const SyntheticEnvironment& env, std::span<const EnvSample> batch,
                          const OptimizerConfig& cfg, const TrainingControls& ctl,
                          UnrollRecord* record = nullptr);

struct InnerLoopResult {
  DenseNetParams pi;
  std::vector<InnerRecord> trace;
  std::vector<UnrollRecord> unroll;  // oldest first, at most K entries
};

// T_in inner steps drawing batches from `stream`. `eval_batch` feeds the
// inner_loss column of the trace. Residuals are only recorded when
// `record_trace` is set.
InnerLoopResult inner_loop(const DenseNetParams& pi0, const DenseNetParams& phi,
                           const SyntheticEnvironment& env, const OptimizerConfig& cfg,
                           const TrainingControls& ctl, Rng& stream,
                           std::span<const EnvSample> eval_batch, bool record_trace);

struct Hypergradient {
  NetGradient gradient;
  double meta_loss = 0.0;
  double mean_lambda = 0.0;
};

// Gradient of the meta objective on `meta_batch` with respect to phi.
// `unroll` lists the inner updates to differentiate through (empty for
// first-order mode).
Hypergradient hypergradient(const DenseNetParams& phi, const DenseNetParams& pi,
                            const SyntheticEnvironment& env, std::span<const EnvSample> meta_batch,
                            std::span<const UnrollRecord> unroll, const OptimizerConfig& cfg,
                            const TrainingControls& ctl);

// Phase 2 of one outer iteration. Returns the hypergradient that was
// computed (applied or not according to `ctl`).
Hypergradient outer_step(TrainState& state, const SyntheticEnvironment& env,
                         std::span<const EnvSample> meta_batch, std::span<const UnrollRecord> unroll,
                         const OptimizerConfig& cfg, const TrainingControls& ctl);

struct TrainResult {
  TrainState state;
  ConvergenceTrace trace;
};

TrainResult train(const SyntheticEnvironment& env, const OptimizerConfig& cfg,
                  const TrainingControls& ctl = {});
TrainResult train_from(TrainState initial, const SyntheticEnvironment& env, const OptimizerConfig& cfg,
                       const TrainingControls& ctl = {});

// Generic projected gradient step x' = clip(x - eta * grad, lo, hi).
std::vector<double> projected_gradient_step(std::span<const double> x, std::span<const double> grad,
                                            double eta, double lo, double hi);

// Run seed combined with the environment seed; every stream derives from it.
std::uint64_t run_key(const SyntheticEnvironment& env, std::uint64_t seed);

}  // namespace sbd
