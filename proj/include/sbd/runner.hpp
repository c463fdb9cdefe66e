// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration, content-addressed output layout and the
// subcommands behind the command-line tool.
//
// Layout: <out>/<command>/<config-hash>/seed_<n>/ with a manifest at
// <out>/manifest.json updated under an exclusive file lock.
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "sbd/bilevel.hpp"
#include "sbd/environments.hpp"
#include "sbd/metrics.hpp"
#include "sbd/validation.hpp"

namespace sbd {

struct DomainOverrides {
  std::optional<std::size_t> state_dim;
  std::optional<double> risk_log_mean;
  std::optional<double> risk_log_sd;
  std::optional<double> at_risk_probability;
  std::optional<double> risk_threshold;
  std::optional<double> alpha_cap_highrisk;
  std::optional<double> alpha_cap_routine;
  std::optional<double> delta;
  std::optional<double> retained_cost_scale;
  std::optional<double> mismatch_cost_scale;
  std::optional<double> severity_saturation;
  std::optional<std::uint64_t> seed;
};

struct ValidationSettings {
  std::vector<double> lambdas = kDefaultLambdas;
  std::size_t monotonicity_T_out = 100;
  std::size_t surrogate_steps = 100;
  LearnedConvergenceConfig convergence;
  std::size_t num_chains = 10000;
  std::vector<std::size_t> k_set = {2, 3, 4, 5};
};

struct ExperimentConfig {
  std::string domain = "medical-like";
  OptimizerConfig optimizer;
  DomainOverrides overrides;
  Variant variant = Variant::FullSBD;
  std::vector<double> deltas = kDefaultDeltas;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir = "out";
  std::size_t eval_size = 2000;
  ValidationSettings validation;

  // Preset with overrides applied; validated.
  SyntheticDomainConfig domain_config() const;
  // Throws InvalidArgument naming the offending key.
  void validate() const;
};

// Strict YAML parsing. Unknown keys, type mismatches and invariant
// violations throw ParseError naming the key and its line.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field with defaults applied. Seeds and output directory are listed
// but not hashed.
nlohmann::json resolved_json(const ExperimentConfig& cfg);
// SHA-256 of the canonical (sorted-key) serialization of the hashed fields.
std::string config_hash(const ExperimentConfig& cfg);

struct RunRecord {
  int format_version = kArtifactFormatVersion;
  std::string command;
  std::string variant;
  std::string domain;
  std::string config_hash;
  std::uint64_t seed = 0;
  double sr = 0.0;
  double te = 0.0;
  double sea = 0.0;
  double ae = 0.0;
  double wall_clock_seconds = 0.0;
  nlohmann::json traces = nlohmann::json::object();  // name -> relative path
  nlohmann::json extra = nlohmann::json::object();

  nlohmann::json to_json() const;
  // Throws UnsupportedVersion for a missing or unknown format_version.
  static RunRecord from_json(const nlohmann::json& j);
};

RunRecord read_run_record(const std::filesystem::path& path);

CsvTable inner_trace_table(const ConvergenceTrace& trace);
CsvTable outer_trace_table(const ConvergenceTrace& trace);

struct SeedOutcome {
  std::string label;  // "seed_<n>" or a multi-seed label
  bool ok = false;    // ran to completion
  bool passed = false;
  std::string error;
  std::string directory;
};

struct CommandOutcome {
  std::string command;
  std::string config_hash;
  std::vector<SeedOutcome> runs;
  nlohmann::json payload = nlohmann::json::object();  // command-specific summary

  bool passed() const;
  nlohmann::json to_json() const;
};

struct RunOptions {
  bool force = false;
};

inline const std::vector<std::string> kValidationTests = {"monotonicity", "convergence", "accountability",
                                                          "ablation-ordering"};

// command in {train, sweep-delta, ablate, validate, dump-preset}; `target`
// names the validation test for `validate`.
CommandOutcome run_command(const ExperimentConfig& cfg, std::string_view command, std::string_view target,
                           const RunOptions& options);

// Mean and sample (n - 1) standard deviation of every metric over the
// RunRecords under `out_dir`, grouped by command, config hash and variant.
// Writes report.json and report.csv into `out_dir`.
CommandOutcome report(const std::filesystem::path& out_dir, const std::optional<std::string>& hash_filter = {});

struct MetricSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double sample_std = 0.0;  // 0 when n < 2
};

MetricSummary summarize(const std::vector<double>& values);

}  // namespace sbd
