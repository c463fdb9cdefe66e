// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sbd/error.hpp"
#include "sbd/io.hpp"
#include "sbd/runner.hpp"

namespace sbd {
namespace {

namespace fs = std::filesystem;

// Fresh directory per test, removed afterwards.
class TempDir {
 public:
  explicit TempDir(const std::string& name) : path_(fs::temp_directory_path() / ("sbd_test_" + name)) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

constexpr const char* kTinyYaml = R"(
domain: educational-like
seeds: [0, 1, 2]
eval_size: 150
deltas: [0.05, 0.2]
optimizer:
  T_out: 2
  T_in: 3
  batch: 16
  unroll_depth: 2
  width: 6
  policy_depth: 2
  meta_depth: 2
  trace_eval_size: 32
)";

ExperimentConfig tiny(const fs::path& out) {
  auto cfg = parse_config(kTinyYaml);
  cfg.output_dir = out.string();
  return cfg;
}

TEST(Config, EmptyDocumentGivesDefaults) {
  const auto cfg = parse_config("");
  const ExperimentConfig defaults;
  EXPECT_EQ(cfg.domain, defaults.domain);
  EXPECT_EQ(cfg.seeds, defaults.seeds);
  EXPECT_EQ(cfg.deltas, defaults.deltas);
  EXPECT_EQ(cfg.optimizer.T_out, defaults.optimizer.T_out);
  EXPECT_EQ(config_hash(cfg), config_hash(defaults));
}

TEST(Config, ParsesNestedSections) {
  const auto cfg = parse_config(R"(
domain: financial-like
variant: no-outer
optimizer: {eta_in: 0.01, mode: first-order, unroll_depth: 0}
environment: {alpha_cap_highrisk: 0.5, seed: 9}
validation: {num_chains: 500, k_set: [2, 3], convergence: {steps: 50}}
)");
  EXPECT_EQ(cfg.domain, "financial-like");
  EXPECT_EQ(cfg.variant, Variant::NoOuter);
  EXPECT_EQ(cfg.optimizer.eta_in, 0.01);
  EXPECT_EQ(cfg.optimizer.mode, HypergradientMode::FirstOrder);
  EXPECT_EQ(cfg.domain_config().alpha_cap_highrisk, 0.5);
  EXPECT_EQ(cfg.domain_config().seed, 9u);
  EXPECT_EQ(cfg.validation.num_chains, 500u);
  EXPECT_EQ(cfg.validation.convergence.steps, 50u);
}

std::string parse_error(const std::string& yaml) {
  try {
    parse_config(yaml);
  } catch (const ParseError& e) {
    return e.what();
  }
  return "";
}

TEST(Config, ErrorsNameTheKey) {
  EXPECT_NE(parse_error("learning_rat: 0.1").find("learning_rat"), std::string::npos);
  const auto typed = parse_error("optimizer:\n  eta_in: fast\n");
  EXPECT_NE(typed.find("optimizer.eta_in"), std::string::npos);
  EXPECT_NE(typed.find("line 2"), std::string::npos);
  EXPECT_NE(parse_error("deltas: [0.1, 1.0]").find("deltas[1]"), std::string::npos);
  EXPECT_NE(parse_error("domain: legal-like").find("domain"), std::string::npos);
  EXPECT_NE(parse_error("optimizer: {T_in: 2, unroll_depth: 3}").find("unroll_depth"), std::string::npos);
  EXPECT_FALSE(parse_error("optimizer: {seed: 3}").empty());
  EXPECT_FALSE(parse_error("[1, 2]").empty());  // the document must be a mapping
}

TEST(Config, HashIgnoresKeyOrderSeedsAndOutput) {
  const auto a = parse_config("domain: medical-like\noptimizer: {eta_in: 0.01, T_in: 7}\nseeds: [0]\n");
  const auto b = parse_config("optimizer: {T_in: 7, eta_in: 0.01}\nseeds: [4, 5]\noutput_dir: elsewhere\ndomain: medical-like\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 64u);
  const auto c = parse_config("domain: medical-like\noptimizer: {eta_in: 0.02, T_in: 7}\n");
  EXPECT_NE(config_hash(a), config_hash(c));
  EXPECT_EQ(resolved_json(b).at("seeds"), nlohmann::json({4, 5}));
}

TEST(RunRecordJson, RoundTripAndVersionCheck) {
  RunRecord r;
  r.command = "train";
  r.variant = "full-SBD";
  r.domain = "medical-like";
  r.config_hash = std::string(64, 'a');
  r.seed = 3;
  r.sr = 0.75;
  r.te = 1.0 / 3.0;
  r.sea = 0.2;
  r.ae = 0.6;
  const auto back = RunRecord::from_json(r.to_json());
  EXPECT_EQ(back.to_json(), r.to_json());
  auto j = r.to_json();
  j["format_version"] = 99;
  EXPECT_THROW(RunRecord::from_json(j), UnsupportedVersion);
  j.erase("format_version");
  EXPECT_THROW(RunRecord::from_json(j), UnsupportedVersion);
}

TEST(Summary, SampleStandardDeviation) {
  const auto m = summarize({1.0, 2.0, 4.0});
  EXPECT_EQ(m.n, 3u);
  EXPECT_NEAR(m.mean, 7.0 / 3.0, 1e-15);
  // sum of squared deviations 14/3 over n - 1 = 2
  EXPECT_NEAR(m.sample_std, std::sqrt(7.0 / 3.0), 1e-15);
  EXPECT_EQ(summarize({5.0}).sample_std, 0.0);
}

TEST(Report, MatchesHandRecomputation) {
  TempDir dir("report");
  const double sr[] = {0.9, 0.95, 1.0}, te[] = {0.5, 0.6, 0.4};
  for (int s = 0; s < 3; ++s) {
    RunRecord r;
    r.command = "train";
    r.variant = "full-SBD";
    r.domain = "medical-like";
    r.config_hash = "h";
    r.seed = static_cast<std::uint64_t>(s);
    r.sr = sr[s];
    r.te = te[s];
    const auto d = dir.path() / "train" / "h" / ("seed_" + std::to_string(s));
    fs::create_directories(d);
    std::ofstream(d / "run_record.json") << r.to_json().dump();
  }
  const auto out = report(dir.path());
  const auto& g = out.payload.at("groups").at(0);
  EXPECT_EQ(g.at("metrics").at("sr").at("n"), 3);
  EXPECT_NEAR(g.at("metrics").at("sr").at("mean").get<double>(), 0.95, 1e-15);
  EXPECT_NEAR(g.at("metrics").at("sr").at("sample_std").get<double>(), 0.05, 1e-15);
  EXPECT_NEAR(g.at("metrics").at("te").at("sample_std").get<double>(), 0.1, 1e-15);
  EXPECT_TRUE(fs::exists(dir.path() / "report.csv"));
  const auto table = parse_csv(read_text_file(dir.path() / "report.csv"));
  EXPECT_EQ(table.rows.size(), 4u);
  EXPECT_THROW(report(dir.path() / "missing"), IoError);
}

TEST(Report, EmptyDirectoryIsAnError) {
  TempDir dir("report_empty");
  EXPECT_THROW(report(dir.path()), InvalidArgument);
}

TEST(Commands, TrainWritesArtifactsAndRefusesToOverwrite) {
  TempDir dir("train");
  auto cfg = tiny(dir.path());
  cfg.seeds = {0};
  const auto out = run_command(cfg, "train", "", {});
  ASSERT_TRUE(out.passed()) << out.to_json().dump(2);
  const auto seed_dir = dir.path() / "train" / config_hash(cfg) / "seed_0";
  for (const char* f : {"run_record.json", "inner_trace.csv", "outer_trace.csv", "policy.params", "meta.params"})
    EXPECT_TRUE(fs::exists(seed_dir / f)) << f;
  EXPECT_TRUE(fs::exists(dir.path() / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir.path() / "train" / config_hash(cfg) / "resolved_config.json"));

  EXPECT_THROW(run_command(cfg, "train", "", {}), AlreadyExists);
  EXPECT_NO_THROW(run_command(cfg, "train", "", RunOptions{true}));
}

TEST(Commands, RepeatedRunsGiveIdenticalMetrics) {
  TempDir a("det_a"), b("det_b");
  auto ca = tiny(a.path()), cb = tiny(b.path());
  ca.seeds = cb.seeds = {1};
  run_command(ca, "train", "", {});
  run_command(cb, "train", "", {});
  const auto h = config_hash(ca);
  auto ra = read_run_record(a.path() / "train" / h / "seed_1" / "run_record.json").to_json();
  auto rb = read_run_record(b.path() / "train" / h / "seed_1" / "run_record.json").to_json();
  ra.erase("wall_clock_seconds");
  rb.erase("wall_clock_seconds");
  EXPECT_EQ(ra, rb);
  EXPECT_EQ(read_text_file(a.path() / "train" / h / "seed_1" / "meta.params"),
            read_text_file(b.path() / "train" / h / "seed_1" / "meta.params"));
}

TEST(Commands, ReportOverTrainedSeeds) {
  TempDir dir("train_report");
  const auto cfg = tiny(dir.path());
  run_command(cfg, "train", "", {});
  std::vector<double> sr;
  for (int s = 0; s < 3; ++s)
    sr.push_back(read_run_record(dir.path() / "train" / config_hash(cfg) / ("seed_" + std::to_string(s)) /
                                 "run_record.json")
                     .sr);
  const double mean = (sr[0] + sr[1] + sr[2]) / 3.0;
  double ss = 0.0;
  for (double v : sr) ss += (v - mean) * (v - mean);
  const auto out = report(dir.path(), config_hash(cfg));
  const auto& m = out.payload.at("groups").at(0).at("metrics").at("sr");
  EXPECT_NEAR(m.at("mean").get<double>(), mean, 1e-15);
  EXPECT_NEAR(m.at("sample_std").get<double>(), std::sqrt(ss / 2.0), 1e-15);
}

TEST(Commands, UnknownCommandAndTarget) {
  TempDir dir("unknown");
  const auto cfg = tiny(dir.path());
  EXPECT_THROW(run_command(cfg, "fly", "", {}), InvalidArgument);
  EXPECT_THROW(run_command(cfg, "validate", "vibes", {}), InvalidArgument);
}

TEST(Commands, DumpPreset) {
  TempDir dir("dump");
  const auto cfg = tiny(dir.path());
  const auto out = run_command(cfg, "dump-preset", "", {});
  EXPECT_TRUE(out.passed());
  const auto files = out.to_json().dump();
  bool found = false;
  for (const auto& e : fs::recursive_directory_iterator(dir.path()))
    found = found || e.path().filename() == "preset.json";
  EXPECT_TRUE(found) << files;
}

TEST(Commands, AccountabilityValidation) {
  TempDir dir("acct");
  auto cfg = tiny(dir.path());
  cfg.validation.num_chains = 2000;
  const auto out = run_command(cfg, "validate", "accountability", {});
  EXPECT_TRUE(out.passed());
  EXPECT_EQ(out.runs.size(), 3u);
}

}  // namespace
}  // namespace sbd
