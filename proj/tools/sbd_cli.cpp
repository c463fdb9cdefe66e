// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Talks to the library only through the C API.
//
// Exit status: 0 when every run completed and every check passed, otherwise
// the numeric sbd_status (8 when checks failed). The outcome JSON, including
// the machine-readable failure list, goes to stdout; diagnostics to stderr.
#include <cstdint>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sbd/sbd.h"

namespace {

struct ConfigDeleter {
  void operator()(sbd_config* c) const { sbd_config_free(c); }
};
struct OutcomeDeleter {
  void operator()(sbd_outcome* o) const { sbd_outcome_free(o); }
};
using ConfigPtr = std::unique_ptr<sbd_config, ConfigDeleter>;
using OutcomePtr = std::unique_ptr<sbd_outcome, OutcomeDeleter>;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string variant;
  std::string mode;
  bool force = false;
  bool quiet = false;
  std::string target;  // validate test or dump-preset name
  std::string hash;    // report filter
};

int fail(sbd_status status, const std::string& context) {
  std::cerr << "sbd: " << context << ": " << sbd_status_name(status) << ": " << sbd_last_error() << "\n";
  return static_cast<int>(status);
}

int finish(sbd_status status, sbd_outcome* raw, const Options& opt, const std::string& context) {
  OutcomePtr outcome(raw);
  if (!outcome) return fail(status, context);
  if (!opt.quiet) std::cout << sbd_outcome_json(outcome.get()) << "\n";
  if (status != SBD_OK) std::cerr << "sbd: " << context << ": " << sbd_status_name(status) << "\n";
  return static_cast<int>(status);
}

// Loads the config (or defaults) and applies the command-line overrides.
sbd_status build_config(const Options& opt, ConfigPtr& out) {
  sbd_config* raw = nullptr;
  sbd_status s = opt.config.empty() ? sbd_config_parse("", &raw) : sbd_config_load(opt.config.c_str(), &raw);
  out.reset(raw);
  if (s != SBD_OK) return s;
  if (opt.seed) {
    const std::uint64_t one = *opt.seed;
    if ((s = sbd_config_set_seeds(out.get(), &one, 1)) != SBD_OK) return s;
  } else if (!opt.seeds.empty()) {
    if ((s = sbd_config_set_seeds(out.get(), opt.seeds.data(), opt.seeds.size())) != SBD_OK) return s;
  }
  if (!opt.out.empty() && (s = sbd_config_set_output_dir(out.get(), opt.out.c_str())) != SBD_OK) return s;
  if (!opt.variant.empty() && (s = sbd_config_set_variant(out.get(), opt.variant.c_str())) != SBD_OK) return s;
  if (!opt.mode.empty() && (s = sbd_config_set_mode(out.get(), opt.mode.c_str())) != SBD_OK) return s;
  return SBD_OK;
}

int run(const std::string& command, const Options& opt) {
  ConfigPtr cfg;
  if (const sbd_status s = build_config(opt, cfg); s != SBD_OK) return fail(s, "config");
  if (command == "dump-preset" && !opt.target.empty())
    if (const sbd_status s = sbd_config_set_domain(cfg.get(), opt.target.c_str()); s != SBD_OK)
      return fail(s, "dump-preset");
  const char* target = command == "validate" ? opt.target.c_str() : nullptr;
  sbd_outcome* raw = nullptr;
  const sbd_status s = sbd_run(cfg.get(), command.c_str(), target, opt.force ? 1 : 0, &raw);
  return finish(s, raw, opt, command);
}

int report(const Options& opt) {
  std::string dir = opt.out;
  if (dir.empty()) {
    ConfigPtr cfg;
    if (const sbd_status s = build_config(opt, cfg); s != SBD_OK) return fail(s, "config");
    const char* configured = nullptr;
    if (const sbd_status s = sbd_config_output_dir(cfg.get(), &configured); s != SBD_OK) return fail(s, "config");
    dir = configured;
  }
  sbd_outcome* raw = nullptr;
  const sbd_status s = sbd_report(dir.c_str(), opt.hash.empty() ? nullptr : opt.hash.c_str(), &raw);
  return finish(s, raw, opt, "report");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Safe bounded delegation experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sbd_version()));

  Options opt;
  auto add_common = [&opt](CLI::App* sub) {
    sub->add_option("--config", opt.config, "YAML experiment configuration")->check(CLI::ExistingFile);
    auto* seed = sub->add_option("--seed", opt.seed, "Run a single seed");
    sub->add_option("--seeds", opt.seeds, "Seeds to run (comma or space separated)")
        ->delimiter(',')
        ->excludes(seed);
    sub->add_option("--out", opt.out, "Output directory");
    sub->add_option("--variant", opt.variant, "Ablation variant");
    sub->add_option("--mode", opt.mode, "Hypergradient mode")
        ->check(CLI::IsMember({"first-order", "truncated-unroll"}));
    sub->add_flag("--force", opt.force, "Overwrite existing results");
    sub->add_flag("--quiet", opt.quiet, "Do not print the outcome JSON");
  };

  auto* train = app.add_subcommand("train", "One training run per seed");
  auto* sweep = app.add_subcommand("sweep-delta", "Pareto sweep over the risk tolerances and SEA");
  auto* ablate = app.add_subcommand("ablate", "Every ablation variant over the sweep");
  auto* validate = app.add_subcommand("validate", "Run one validation test");
  validate->add_option("test", opt.target, "monotonicity | convergence | accountability | ablation-ordering")
      ->required()
      ->check(CLI::IsMember({"monotonicity", "convergence", "accountability", "ablation-ordering"}));
  auto* dump = app.add_subcommand("dump-preset", "Write the resolved environment preset");
  dump->add_option("preset", opt.target, "Preset name (defaults to the configured domain)");
  auto* rep = app.add_subcommand("report", "Mean and sample std of every metric across seeds");
  rep->add_option("--hash", opt.hash, "Only aggregate records with this config hash");
  for (auto* sub : {train, sweep, ablate, validate, dump, rep}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(SBD_INVALID_ARGUMENT);
  }

  if (*rep) return report(opt);
  for (auto* sub : {train, sweep, ablate, validate, dump})
    if (*sub) return run(sub->get_name(), opt);
  return static_cast<int>(SBD_INVALID_ARGUMENT);
}
