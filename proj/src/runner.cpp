// SPDX-License-Identifier: Apache-2.0
#include "sbd/runner.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <yaml-cpp/yaml.h>

#include "sbd/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace sbd {

namespace {

// ---------------------------------------------------------------------------
// YAML helpers. Every error names the dotted key path and its 1-based line.

std::string where(const std::string& key, const YAML::Node& node) {
  const auto mark = node.Mark();
  if (mark.line < 0) return "'" + key + "'";
  return "'" + key + "' (line " + std::to_string(mark.line + 1) + ")";
}

[[noreturn]] void fail(const std::string& key, const YAML::Node& node, const std::string& what) {
  throw ParseError("config key " + where(key, node) + ": " + what);
}

template <class T>
T scalar(const YAML::Node& node, const std::string& key, const char* type_name) {
  if (!node.IsScalar()) fail(key, node, std::string("expected ") + type_name);
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    fail(key, node, std::string("expected ") + type_name + ", got '" + node.Scalar() + "'");
  }
}

double real(const YAML::Node& node, const std::string& key) {
  const double v = scalar<double>(node, key, "a number");
  if (!std::isfinite(v)) fail(key, node, "must be finite");
  return v;
}

std::uint64_t unsigned_int(const YAML::Node& node, const std::string& key) {
  const std::string& text = node.IsScalar() ? node.Scalar() : std::string();
  if (!text.empty() && text.front() == '-') fail(key, node, "must be non-negative");
  return scalar<std::uint64_t>(node, key, "a non-negative integer");
}

std::size_t count(const YAML::Node& node, const std::string& key) {
  return static_cast<std::size_t>(unsigned_int(node, key));
}

std::size_t positive_count(const YAML::Node& node, const std::string& key) {
  const std::size_t v = count(node, key);
  if (v == 0) fail(key, node, "must be positive");
  return v;
}

double positive_real(const YAML::Node& node, const std::string& key) {
  const double v = real(node, key);
  if (!(v > 0.0)) fail(key, node, "must be positive");
  return v;
}

double unit_real(const YAML::Node& node, const std::string& key) {
  const double v = real(node, key);
  if (v < 0.0 || v > 1.0) fail(key, node, "must lie in [0, 1]");
  return v;
}

std::string text(const YAML::Node& node, const std::string& key) {
  return scalar<std::string>(node, key, "a string");
}

template <class F>
auto sequence(const YAML::Node& node, const std::string& key, F element) {
  if (!node.IsSequence()) fail(key, node, "expected a list");
  std::vector<decltype(element(node, key))> out;
  for (std::size_t i = 0; i < node.size(); ++i) out.push_back(element(node[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

using Handler = std::function<void(const YAML::Node&, const std::string&)>;

// Walks a mapping, dispatching each key to its handler; an unknown key is an
// error naming the key.
void walk(const YAML::Node& map, const std::string& prefix, const std::map<std::string, Handler>& handlers) {
  if (map.IsNull()) return;
  if (!map.IsMap()) fail(prefix.empty() ? "<root>" : prefix, map, "expected a mapping");
  std::set<std::string> seen;
  for (const auto& kv : map) {
    const std::string name = kv.first.as<std::string>();
    const std::string key = prefix.empty() ? name : prefix + "." + name;
    const auto it = handlers.find(name);
    if (it == handlers.end()) fail(key, kv.first, "unknown key");
    if (!seen.insert(name).second) fail(key, kv.first, "duplicate key");
    it->second(kv.second, key);
  }
}

void parse_optimizer(const YAML::Node& node, OptimizerConfig& o) {
  walk(node, "optimizer",
       {
           {"eta_out", [&](const YAML::Node& n, const std::string& k) { o.eta_out = positive_real(n, k); }},
           {"eta_in", [&](const YAML::Node& n, const std::string& k) { o.eta_in = positive_real(n, k); }},
           {"T_out", [&](const YAML::Node& n, const std::string& k) { o.T_out = positive_count(n, k); }},
           {"T_in", [&](const YAML::Node& n, const std::string& k) { o.T_in = positive_count(n, k); }},
           {"batch", [&](const YAML::Node& n, const std::string& k) { o.batch = positive_count(n, k); }},
           {"unroll_depth", [&](const YAML::Node& n, const std::string& k) { o.unroll_depth = count(n, k); }},
           {"mode",
            [&](const YAML::Node& n, const std::string& k) {
              try {
                o.mode = parse_mode(text(n, k));
              } catch (const InvalidArgument& e) {
                fail(k, n, e.what());
              }
            }},
           {"weight_decay",
            [&](const YAML::Node& n, const std::string& k) {
              o.weight_decay = real(n, k);
              if (o.weight_decay < 0.0) fail(k, n, "must be non-negative");
            }},
           {"width", [&](const YAML::Node& n, const std::string& k) { o.width = positive_count(n, k); }},
           {"policy_depth", [&](const YAML::Node& n, const std::string& k) { o.policy_depth = positive_count(n, k); }},
           {"meta_depth", [&](const YAML::Node& n, const std::string& k) { o.meta_depth = positive_count(n, k); }},
           {"trace_eval_size", [&](const YAML::Node& n, const std::string& k) { o.trace_eval_size = count(n, k); }},
       });
}

void parse_environment(const YAML::Node& node, DomainOverrides& d) {
  auto set_real = [](std::optional<double>& slot) {
    return [&slot](const YAML::Node& n, const std::string& k) { slot = real(n, k); };
  };
  walk(node, "environment",
       {
           {"state_dim", [&](const YAML::Node& n, const std::string& k) { d.state_dim = positive_count(n, k); }},
           {"risk_log_mean", set_real(d.risk_log_mean)},
           {"risk_log_sd", set_real(d.risk_log_sd)},
           {"at_risk_probability", set_real(d.at_risk_probability)},
           {"risk_threshold", set_real(d.risk_threshold)},
           {"alpha_cap_highrisk", set_real(d.alpha_cap_highrisk)},
           {"alpha_cap_routine", set_real(d.alpha_cap_routine)},
           {"delta", set_real(d.delta)},
           {"retained_cost_scale", set_real(d.retained_cost_scale)},
           {"mismatch_cost_scale", set_real(d.mismatch_cost_scale)},
           {"severity_saturation", set_real(d.severity_saturation)},
           {"seed", [&](const YAML::Node& n, const std::string& k) { d.seed = unsigned_int(n, k); }},
       });
}

void parse_validation(const YAML::Node& node, ValidationSettings& v) {
  walk(node, "validation",
       {
           {"lambdas",
            [&](const YAML::Node& n, const std::string& k) {
              v.lambdas = sequence(n, k, unit_real);
              if (v.lambdas.size() < 2) fail(k, n, "needs at least two values");
            }},
           {"monotonicity_T_out",
            [&](const YAML::Node& n, const std::string& k) { v.monotonicity_T_out = positive_count(n, k); }},
           {"surrogate_steps",
            [&](const YAML::Node& n, const std::string& k) { v.surrogate_steps = positive_count(n, k); }},
           {"num_chains", [&](const YAML::Node& n, const std::string& k) { v.num_chains = positive_count(n, k); }},
           {"k_set",
            [&](const YAML::Node& n, const std::string& k) {
              v.k_set = sequence(n, k, positive_count);
              if (v.k_set.empty()) fail(k, n, "must not be empty");
            }},
           {"convergence",
            [&](const YAML::Node& n, const std::string&) {
              auto& c = v.convergence;
              walk(n, "validation.convergence",
                   {
                       {"steps", [&](const YAML::Node& m, const std::string& k) { c.steps = positive_count(m, k); }},
                       {"eta_in", [&](const YAML::Node& m, const std::string& k) { c.eta_in = positive_real(m, k); }},
                       {"weight_decay",
                        [&](const YAML::Node& m, const std::string& k) {
                          c.weight_decay = real(m, k);
                          if (c.weight_decay < 0.0) fail(k, m, "must be non-negative");
                        }},
                       {"batch", [&](const YAML::Node& m, const std::string& k) { c.batch = positive_count(m, k); }},
                       {"lambda", [&](const YAML::Node& m, const std::string& k) { c.lambda = unit_real(m, k); }},
                   });
            }},
       });
}

json optimizer_json(const OptimizerConfig& o) {
  return {{"eta_out", o.eta_out},         {"eta_in", o.eta_in},
          {"T_out", o.T_out},             {"T_in", o.T_in},
          {"batch", o.batch},             {"unroll_depth", o.unroll_depth},
          {"mode", to_string(o.mode)},    {"weight_decay", o.weight_decay},
          {"width", o.width},             {"policy_depth", o.policy_depth},
          {"meta_depth", o.meta_depth},   {"trace_eval_size", o.trace_eval_size}};
}

json validation_json(const ValidationSettings& v) {
  return {{"lambdas", v.lambdas},
          {"monotonicity_T_out", v.monotonicity_T_out},
          {"surrogate_steps", v.surrogate_steps},
          {"num_chains", v.num_chains},
          {"k_set", v.k_set},
          {"convergence",
           {{"steps", v.convergence.steps},
            {"eta_in", v.convergence.eta_in},
            {"weight_decay", v.convergence.weight_decay},
            {"batch", v.convergence.batch},
            {"lambda", v.convergence.lambda}}}};
}

json hashed_fields(const ExperimentConfig& cfg) {
  json j = resolved_json(cfg);
  j.erase("seeds");
  j.erase("output_dir");
  return j;
}

// ---------------------------------------------------------------------------
// Output layout.

std::string seed_label(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

std::string seeds_label(std::span<const std::uint64_t> seeds) {
  std::string s = "seeds";
  for (auto v : seeds) s += "_" + std::to_string(v);
  return s;
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void require_version(const json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("format_version") || !j["format_version"].is_number_integer())
    throw UnsupportedVersion(what + ": missing format_version");
  const int v = j["format_version"].get<int>();
  if (v != kArtifactFormatVersion)
    throw UnsupportedVersion(what + ": unsupported format_version " + std::to_string(v));
}

// Exclusive advisory lock on <out>/.manifest.lock for the manifest update.
class ManifestLock {
 public:
  explicit ManifestLock(const fs::path& out) {
    fs::create_directories(out);
    const auto path = (out / ".manifest.lock").string();
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open lock file " + path);
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      throw IoError("cannot lock " + path);
    }
  }
  ~ManifestLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  ManifestLock(const ManifestLock&) = delete;
  ManifestLock& operator=(const ManifestLock&) = delete;

 private:
  int fd_ = -1;
};

void update_manifest(const fs::path& out, const CommandOutcome& outcome) {
  ManifestLock lock(out);
  const fs::path path = out / "manifest.json";
  json manifest = {{"format_version", kArtifactFormatVersion}, {"entries", json::array()}};
  if (fs::exists(path)) {
    manifest = read_json(path);
    require_version(manifest, path.string());
  }
  auto& entries = manifest["entries"];
  for (const auto& run : outcome.runs) {
    if (run.directory.empty()) continue;
    json entry = {{"command", outcome.command},
                  {"config_hash", outcome.config_hash},
                  {"label", run.label},
                  {"directory", run.directory},
                  {"ok", run.ok},
                  {"passed", run.passed}};
    auto same = std::find_if(entries.begin(), entries.end(),
                             [&](const json& e) { return e.value("directory", "") == run.directory; });
    if (same != entries.end())
      *same = entry;
    else
      entries.push_back(entry);
  }
  write_json(path, manifest);
}

// A job owns `dir`; an existing directory is refused unless forced.
void claim_directory(const fs::path& dir, bool force) {
  if (fs::exists(dir)) {
    if (!force) throw AlreadyExists(dir.string() + " already exists (pass --force to overwrite)");
    fs::remove_all(dir);
  }
  fs::create_directories(dir);
}

bool all_finite(const RunRecord& r) {
  return std::isfinite(r.sr) && std::isfinite(r.te) && std::isfinite(r.sea) && std::isfinite(r.ae);
}

struct Context {
  const ExperimentConfig& cfg;
  SyntheticDomainConfig domain;
  std::string hash;
  fs::path out;
  fs::path base;  // <out>/<command>/<hash>
  bool force = false;
  CommandOutcome outcome;
  json failures = json::array();

  OptimizerConfig optimizer(std::uint64_t seed) const {
    OptimizerConfig o = cfg.optimizer;
    o.seed = seed;
    return o;
  }

  // Runs one job in `rel` (relative to base). Errors other than a refused
  // rerun are recorded, not propagated, so the remaining seeds still run.
  void job(const std::string& label, const fs::path& rel, const std::function<bool(const fs::path&)>& body) {
    SeedOutcome s;
    s.label = label;
    const fs::path dir = base / rel;
    s.directory = fs::relative(dir, out).generic_string();
    try {
      s.passed = body(dir);
      s.ok = true;
    } catch (const AlreadyExists&) {
      throw;  // a refused rerun aborts the command
    } catch (const Error& e) {
      s.error = e.what();
    } catch (const std::exception& e) {
      s.error = std::string("internal error: ") + e.what();
    }
    if (!s.ok || !s.passed)
      failures.push_back({{"label", label},
                          {"directory", s.directory},
                          {"error", s.ok ? json(nullptr) : json(s.error)},
                          {"reason", s.ok ? "check failed" : "run failed"}});
    outcome.runs.push_back(std::move(s));
  }

  void finish() {
    write_json(base / "failures.json", {{"format_version", kArtifactFormatVersion},
                                        {"command", outcome.command},
                                        {"config_hash", hash},
                                        {"failures", failures}});
    update_manifest(out, outcome);
  }
};

RunRecord base_record(const Context& ctx, std::string command, Variant variant, std::uint64_t seed) {
  RunRecord r;
  r.command = std::move(command);
  r.variant = to_string(variant);
  r.domain = ctx.domain.name;
  r.config_hash = ctx.hash;
  r.seed = seed;
  return r;
}

json pareto_json(const std::vector<ParetoPoint>& points) {
  json j = json::array();
  for (const auto& p : points) j.push_back({{"delta", p.delta}, {"sr", p.sr}, {"te", p.te}});
  return j;
}

// Trains one variant for one seed and writes its record, traces and
// parameters into `dir`.
bool training_job(Context& ctx, const std::string& command, Variant variant, std::uint64_t seed,
                  std::span<const double> deltas, const fs::path& dir) {
  claim_directory(dir, ctx.force);
  const auto t0 = std::chrono::steady_clock::now();
  const VariantRun run = run_variant({variant}, ctx.domain, ctx.optimizer(seed), deltas, ctx.cfg.eval_size);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  RunRecord r = base_record(ctx, command, variant, seed);
  r.sr = run.metrics.sr;
  r.te = run.metrics.te;
  r.sea = run.metrics.sea;
  r.ae = run.metrics.ae;
  r.wall_clock_seconds = seconds;
  r.traces = {{"inner", "inner_trace.csv"},
              {"outer", "outer_trace.csv"},
              {"policy", "policy.params"},
              {"meta", "meta.params"}};
  r.extra["pareto"] = pareto_json(run.points);

  write_text_file(dir / "inner_trace.csv", to_csv(inner_trace_table(run.base.trace)));
  write_text_file(dir / "outer_trace.csv", to_csv(outer_trace_table(run.base.trace)));
  if (!deltas.empty()) {
    CsvTable pareto;
    pareto.header = {"delta", "sr", "te"};
    for (const auto& p : run.points) pareto.add_numeric_row({p.delta, p.sr, p.te});
    write_text_file(dir / "pareto.csv", to_csv(pareto));
    r.traces["pareto"] = "pareto.csv";
  }
  save_params(run.base.state.pi, (dir / "policy.params").string());
  save_params(run.base.state.phi, (dir / "meta.params").string());
  write_json(dir / "run_record.json", r.to_json());
  return all_finite(r);
}

bool validation_job(const ValidationReport& report, const fs::path& dir, const Context& ctx) {
  ValidationReport r = report;
  r.config_hash = ctx.hash;
  write_json(dir / "validation_report.json", r.to_json());
  return r.pass && !r.failed;
}

void run_validation(Context& ctx, std::string_view target) {
  const auto& cfg = ctx.cfg;
  const auto& v = cfg.validation;
  if (target == "monotonicity") {
    for (auto seed : cfg.seeds) {
      ctx.job(seed_label(seed), seed_label(seed), [&](const fs::path& dir) {
        claim_directory(dir, ctx.force);
        OptimizerConfig o = ctx.optimizer(seed);
        o.T_out = v.monotonicity_T_out;
        return validation_job(monotonicity_sweep(ctx.domain, o, v.lambdas, cfg.eval_size), dir, ctx);
      });
    }
  } else if (target == "convergence") {
    ctx.job("surrogate", "surrogate", [&](const fs::path& dir) {
      claim_directory(dir, ctx.force);
      std::vector<ValidationReport> reports;
      for (const auto& c : standard_surrogate_cases()) {
        ValidationReport r = surrogate_convergence(c.q, c.eta, v.surrogate_steps);
        r.config_hash = ctx.hash;
        r.details["case"] = c.label;
        reports.push_back(std::move(r));
      }
      json list = json::array();
      for (const auto& r : reports) list.push_back(r.to_json());
      write_json(dir / "validation_report.json", {{"format_version", kArtifactFormatVersion}, {"reports", list}});
      write_text_file(dir / "summary.csv", to_csv(summary_table(reports)));
      return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.pass && !r.failed; });
    });
    for (auto seed : cfg.seeds) {
      ctx.job(seed_label(seed), seed_label(seed), [&](const fs::path& dir) {
        claim_directory(dir, ctx.force);
        return validation_job(learned_convergence(ctx.domain, ctx.optimizer(seed), v.convergence), dir, ctx);
      });
    }
  } else if (target == "accountability") {
    for (auto seed : cfg.seeds) {
      ctx.job(seed_label(seed), seed_label(seed), [&](const fs::path& dir) {
        claim_directory(dir, ctx.force);
        return validation_job(accountability_validation(seed, v.num_chains, v.k_set), dir, ctx);
      });
    }
  } else if (target == "ablation-ordering") {
    const std::string label = seeds_label(cfg.seeds);
    ctx.job(label, label, [&](const fs::path& dir) {
      claim_directory(dir, ctx.force);
      return validation_job(ablation_ordering(ctx.domain, cfg.optimizer, cfg.seeds, cfg.deltas, cfg.eval_size), dir,
                            ctx);
    });
  } else {
    throw InvalidArgument("unknown validation test '" + std::string(target) +
                          "' (expected monotonicity, convergence, accountability or ablation-ordering)");
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration.

SyntheticDomainConfig ExperimentConfig::domain_config() const {
  SyntheticDomainConfig d = preset(domain);
  const auto& o = overrides;
  if (o.state_dim) d.state_dim = *o.state_dim;
  if (o.risk_log_mean) d.risk_log_mean = *o.risk_log_mean;
  if (o.risk_log_sd) d.risk_log_sd = *o.risk_log_sd;
  if (o.at_risk_probability) d.at_risk_probability = *o.at_risk_probability;
  if (o.risk_threshold) d.risk_threshold = *o.risk_threshold;
  if (o.alpha_cap_highrisk) d.alpha_cap_highrisk = *o.alpha_cap_highrisk;
  if (o.alpha_cap_routine) d.alpha_cap_routine = *o.alpha_cap_routine;
  if (o.delta) d.delta = *o.delta;
  if (o.retained_cost_scale) d.retained_cost_scale = *o.retained_cost_scale;
  if (o.mismatch_cost_scale) d.mismatch_cost_scale = *o.mismatch_cost_scale;
  if (o.severity_saturation) d.severity_saturation = *o.severity_saturation;
  if (o.seed) d.seed = *o.seed;
  d.validate();
  return d;
}

void ExperimentConfig::validate() const {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), domain) == names.end())
    throw InvalidArgument("domain: unknown preset '" + domain + "'");
  if (seeds.empty()) throw InvalidArgument("seeds: must not be empty");
  if (deltas.empty()) throw InvalidArgument("deltas: must not be empty");
  std::set<double> unique;
  for (double d : deltas) {
    if (!(d > 0.0 && d < 1.0)) throw InvalidArgument("deltas: values must lie in (0, 1)");
    if (!unique.insert(d).second) throw InvalidArgument("deltas: repeated value");
  }
  if (eval_size == 0) throw InvalidArgument("eval_size: must be positive");
  if (output_dir.empty()) throw InvalidArgument("output_dir: must not be empty");
  optimizer.validate();
  (void)domain_config();
}

ExperimentConfig parse_config(std::string_view source) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(source));
  } catch (const YAML::Exception& e) {
    throw ParseError("config is not valid YAML (line " + std::to_string(e.mark.line + 1) + "): " + e.msg);
  }
  ExperimentConfig cfg;
  if (!root.IsDefined() || root.IsNull()) return cfg;

  YAML::Node deltas_node, seeds_node, domain_node, optimizer_node, environment_node;
  walk(root, "",
       {
           {"domain",
            [&](const YAML::Node& n, const std::string& k) {
              cfg.domain = text(n, k);
              domain_node = n;
            }},
           {"variant",
            [&](const YAML::Node& n, const std::string& k) {
              try {
                cfg.variant = parse_variant(text(n, k));
              } catch (const InvalidArgument& e) {
                fail(k, n, e.what());
              }
            }},
           {"deltas",
            [&](const YAML::Node& n, const std::string& k) {
              cfg.deltas = sequence(n, k, [](const YAML::Node& e, const std::string& ek) {
                const double d = real(e, ek);
                if (!(d > 0.0 && d < 1.0)) fail(ek, e, "must lie in (0, 1)");
                return d;
              });
              deltas_node = n;
            }},
           {"seeds",
            [&](const YAML::Node& n, const std::string& k) {
              cfg.seeds = sequence(n, k, unsigned_int);
              if (cfg.seeds.empty()) fail(k, n, "must not be empty");
            }},
           {"output_dir", [&](const YAML::Node& n, const std::string& k) { cfg.output_dir = text(n, k); }},
           {"eval_size", [&](const YAML::Node& n, const std::string& k) { cfg.eval_size = positive_count(n, k); }},
           {"optimizer",
            [&](const YAML::Node& n, const std::string&) {
              parse_optimizer(n, cfg.optimizer);
              optimizer_node = n;
            }},
           {"environment",
            [&](const YAML::Node& n, const std::string&) {
              parse_environment(n, cfg.overrides);
              environment_node = n;
            }},
           {"validation", [&](const YAML::Node& n, const std::string&) { parse_validation(n, cfg.validation); }},
       });

  // Cross-field invariants, reported against the section that carries them.
  try {
    const auto names = preset_names();
    if (std::find(names.begin(), names.end(), cfg.domain) == names.end())
      fail("domain", domain_node, "unknown preset '" + cfg.domain + "'");
    if (std::set<double>(cfg.deltas.begin(), cfg.deltas.end()).size() != cfg.deltas.size())
      fail("deltas", deltas_node, "repeated value");
    try {
      cfg.optimizer.validate();
    } catch (const InvalidArgument& e) {
      fail("optimizer", optimizer_node, e.what());
    }
    try {
      (void)cfg.domain_config();
    } catch (const InvalidArgument& e) {
      fail("environment", environment_node, e.what());
    }
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) { return parse_config(read_text_file(path)); }

json resolved_json(const ExperimentConfig& cfg) {
  return {{"format_version", kArtifactFormatVersion},
          {"domain", cfg.domain},
          {"environment", to_json(cfg.domain_config())},
          {"optimizer", optimizer_json(cfg.optimizer)},
          {"variant", to_string(cfg.variant)},
          {"deltas", cfg.deltas},
          {"eval_size", cfg.eval_size},
          {"validation", validation_json(cfg.validation)},
          {"seeds", cfg.seeds},
          {"output_dir", cfg.output_dir}};
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(hashed_fields(cfg).dump()); }

// ---------------------------------------------------------------------------
// Records.

json RunRecord::to_json() const {
  json j = {{"format_version", format_version},
            {"command", command},
            {"variant", variant},
            {"domain", domain},
            {"config_hash", config_hash},
            {"seed", seed},
            {"metrics", {{"sr", sr}, {"te", te}, {"sea", sea}, {"ae", ae}}},
            {"wall_clock_seconds", wall_clock_seconds},
            {"traces", traces}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  require_version(j, "run record");
  RunRecord r;
  try {
    r.command = j.at("command").get<std::string>();
    r.variant = j.at("variant").get<std::string>();
    r.domain = j.at("domain").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    const auto& m = j.at("metrics");
    r.sr = m.at("sr").get<double>();
    r.te = m.at("te").get<double>();
    r.sea = m.at("sea").get<double>();
    r.ae = m.at("ae").get<double>();
    r.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    r.traces = j.at("traces");
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed run record: ") + e.what());
  }
  static const std::set<std::string> known = {"format_version", "command", "variant", "domain",
                                              "config_hash",    "seed",    "metrics", "wall_clock_seconds",
                                              "traces"};
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) r.extra[k] = v;
  return r;
}

RunRecord read_run_record(const fs::path& path) { return RunRecord::from_json(read_json(path)); }

CsvTable inner_trace_table(const ConvergenceTrace& trace) {
  CsvTable t;
  t.header = {"step", "residual_sq", "inner_loss"};
  for (const auto& r : trace.inner)
    t.add_row({std::to_string(r.step), format_double(r.residual_sq), format_double(r.inner_loss)});
  return t;
}

CsvTable outer_trace_table(const ConvergenceTrace& trace) {
  CsvTable t;
  t.header = {"outer_step", "meta_loss", "mean_lambda", "sr", "te"};
  for (const auto& r : trace.outer)
    t.add_row({std::to_string(r.outer_step), format_double(r.meta_loss), format_double(r.mean_lambda),
               format_double(r.sr), format_double(r.te)});
  return t;
}

bool CommandOutcome::passed() const {
  return !runs.empty() && std::all_of(runs.begin(), runs.end(), [](const SeedOutcome& s) { return s.ok && s.passed; });
}

json CommandOutcome::to_json() const {
  json runs_json = json::array();
  for (const auto& s : runs)
    runs_json.push_back({{"label", s.label},
                         {"ok", s.ok},
                         {"passed", s.passed},
                         {"error", s.error},
                         {"directory", s.directory}});
  return {{"format_version", kArtifactFormatVersion},
          {"command", command},
          {"config_hash", config_hash},
          {"passed", passed()},
          {"runs", runs_json},
          {"payload", payload}};
}

// ---------------------------------------------------------------------------
// Commands.

CommandOutcome run_command(const ExperimentConfig& cfg, std::string_view command, std::string_view target,
                           const RunOptions& options) {
  cfg.validate();
  const std::string cmd(command);
  const std::string label = cmd == "validate" ? "validate-" + std::string(target) : cmd;
  if (cmd == "validate" &&
      std::find(kValidationTests.begin(), kValidationTests.end(), std::string(target)) == kValidationTests.end())
    throw InvalidArgument("unknown validation test '" + std::string(target) + "'");
  if (cmd != "validate" && !target.empty())
    throw InvalidArgument("command '" + cmd + "' takes no target");

  Context ctx{cfg, cfg.domain_config(), config_hash(cfg), fs::path(cfg.output_dir), {}, options.force, {}, {}};
  ctx.base = ctx.out / label / ctx.hash;
  ctx.outcome.command = label;
  ctx.outcome.config_hash = ctx.hash;
  fs::create_directories(ctx.base);
  write_json(ctx.base / "resolved_config.json", resolved_json(cfg));

  if (cmd == "train") {
    for (auto seed : cfg.seeds)
      ctx.job(seed_label(seed), seed_label(seed), [&](const fs::path& dir) {
        return training_job(ctx, cmd, cfg.variant, seed, {}, dir);
      });
  } else if (cmd == "sweep-delta") {
    for (auto seed : cfg.seeds)
      ctx.job(seed_label(seed), seed_label(seed), [&](const fs::path& dir) {
        return training_job(ctx, cmd, cfg.variant, seed, cfg.deltas, dir);
      });
  } else if (cmd == "ablate") {
    for (Variant v : all_variants())
      for (auto seed : cfg.seeds)
        ctx.job(to_string(v) + "/" + seed_label(seed), fs::path(to_string(v)) / seed_label(seed),
                [&](const fs::path& dir) { return training_job(ctx, cmd, v, seed, cfg.deltas, dir); });
  } else if (cmd == "validate") {
    run_validation(ctx, target);
  } else if (cmd == "dump-preset") {
    ctx.job("preset", "preset", [&](const fs::path& dir) {
      claim_directory(dir, ctx.force);
      json j = to_json(ctx.domain);
      j["format_version"] = kArtifactFormatVersion;
      write_json(dir / "preset.json", j);
      ctx.outcome.payload["preset"] = j;
      return true;
    });
  } else {
    throw InvalidArgument("unknown command '" + cmd +
                          "' (expected train, sweep-delta, ablate, validate, report or dump-preset)");
  }

  // Collect per-run results into the payload.
  json results = json::array();
  for (const auto& s : ctx.outcome.runs) {
    const fs::path dir = ctx.out / s.directory;
    json entry = {{"label", s.label}, {"ok", s.ok}, {"passed", s.passed}};
    if (fs::exists(dir / "run_record.json")) entry["run_record"] = read_json(dir / "run_record.json");
    if (fs::exists(dir / "validation_report.json")) entry["validation"] = read_json(dir / "validation_report.json");
    if (!s.ok) entry["error"] = s.error;
    results.push_back(std::move(entry));
  }
  ctx.outcome.payload["results"] = std::move(results);
  ctx.finish();
  return ctx.outcome;
}

MetricSummary summarize(const std::vector<double>& values) {
  MetricSummary s;
  s.n = values.size();
  if (s.n == 0) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sample_std = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

CommandOutcome report(const fs::path& out_dir, const std::optional<std::string>& hash_filter) {
  if (!fs::is_directory(out_dir)) throw IoError("output directory " + out_dir.string() + " does not exist");

  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir))
    if (entry.is_regular_file() && entry.path().filename() == "run_record.json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  using Key = std::tuple<std::string, std::string, std::string>;
  struct Group {
    std::string domain;
    std::vector<std::uint64_t> seeds;
    std::vector<double> sr, te, sea, ae;
  };
  std::map<Key, Group> groups;
  CommandOutcome outcome;
  outcome.command = "report";
  for (const auto& f : files) {
    SeedOutcome s;
    s.label = fs::relative(f.parent_path(), out_dir).generic_string();
    s.directory = s.label;
    try {
      const RunRecord r = read_run_record(f);
      if (hash_filter && r.config_hash != *hash_filter) continue;
      auto& g = groups[{r.command, r.config_hash, r.variant}];
      g.domain = r.domain;
      g.seeds.push_back(r.seed);
      g.sr.push_back(r.sr);
      g.te.push_back(r.te);
      g.sea.push_back(r.sea);
      g.ae.push_back(r.ae);
      s.ok = s.passed = true;
    } catch (const Error& e) {
      s.error = e.what();
    }
    outcome.runs.push_back(std::move(s));
  }
  if (outcome.runs.empty()) throw InvalidArgument("no run records under " + out_dir.string());

  json groups_json = json::array();
  CsvTable table;
  table.header = {"command", "config_hash", "variant", "domain", "metric", "n", "mean", "sample_std"};
  for (const auto& [key, g] : groups) {
    const auto& [command, hash, variant] = key;
    json metrics = json::object();
    const std::pair<const char*, const std::vector<double>*> columns[] = {
        {"sr", &g.sr}, {"te", &g.te}, {"sea", &g.sea}, {"ae", &g.ae}};
    for (const auto& [name, values] : columns) {
      const MetricSummary m = summarize(*values);
      metrics[name] = {{"n", m.n}, {"mean", m.mean}, {"sample_std", m.sample_std}, {"values", *values}};
      table.add_row({command, hash, variant, g.domain, name, std::to_string(m.n), format_double(m.mean),
                     format_double(m.sample_std)});
    }
    groups_json.push_back({{"command", command},
                           {"config_hash", hash},
                           {"variant", variant},
                           {"domain", g.domain},
                           {"seeds", g.seeds},
                           {"metrics", metrics}});
  }
  outcome.payload = {{"format_version", kArtifactFormatVersion},
                     {"std_convention", "sample standard deviation (n - 1 denominator); 0 for a single record"},
                     {"groups", groups_json}};
  write_json(out_dir / "report.json", outcome.payload);
  write_text_file(out_dir / "report.csv", to_csv(table));
  return outcome;
}

}  // namespace sbd
