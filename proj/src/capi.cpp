// SPDX-License-Identifier: Apache-2.0
#include "sbd/sbd.h"

#include <algorithm>
#include <exception>
#include <memory>
#include <new>
#include <optional>
#include <string>
#include <vector>

#include "sbd/accountability.hpp"
#include "sbd/approximator.hpp"
#include "sbd/error.hpp"
#include "sbd/metrics.hpp"
#include "sbd/runner.hpp"
#include "sbd/validation.hpp"

struct sbd_config {
  sbd::ExperimentConfig cfg;
  std::string hash;
  std::string resolved;
};

struct sbd_outcome {
  sbd::CommandOutcome outcome;
  std::string json;
};

struct sbd_network {
  sbd::DenseNetParams params;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_scratch;

sbd_status to_status(sbd::ErrorCode code) {
  switch (code) {
    case sbd::ErrorCode::InvalidArgument: return SBD_INVALID_ARGUMENT;
    case sbd::ErrorCode::Shape: return SBD_SHAPE_ERROR;
    case sbd::ErrorCode::Numeric: return SBD_NUMERIC_ERROR;
    case sbd::ErrorCode::Parse: return SBD_PARSE_ERROR;
    case sbd::ErrorCode::Io: return SBD_IO_ERROR;
    case sbd::ErrorCode::AlreadyExists: return SBD_ALREADY_EXISTS;
    case sbd::ErrorCode::UnsupportedVersion: return SBD_UNSUPPORTED_VERSION;
  }
  return SBD_INTERNAL_ERROR;
}

// Runs `body`, translating exceptions into a status and the thread-local
// message. Nothing escapes the C boundary.
template <class F>
sbd_status guarded(F&& body) {
  g_last_error.clear();
  try {
    return body();
  } catch (const sbd::Error& e) {
    g_last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SBD_INTERNAL_ERROR;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return SBD_INTERNAL_ERROR;
  } catch (...) {
    g_last_error = "internal error: unknown exception";
    return SBD_INTERNAL_ERROR;
  }
}

template <class T>
void require(const T* p, const char* name) {
  if (p == nullptr) throw sbd::InvalidArgument(std::string(name) + " must not be NULL");
}

void refresh(sbd_config* c) {
  c->cfg.validate();
  c->hash = sbd::config_hash(c->cfg);
  c->resolved = sbd::resolved_json(c->cfg).dump(2);
}

// Applies `change` to a copy and commits only if the result validates.
template <class F>
void update(sbd_config* c, F&& change) {
  sbd::ExperimentConfig next = c->cfg;
  change(next);
  next.validate();
  c->cfg = std::move(next);
  refresh(c);
}

sbd_outcome* wrap(sbd::CommandOutcome outcome) {
  auto* o = new sbd_outcome{std::move(outcome), {}};
  o->json = o->outcome.to_json().dump(2);
  return o;
}

}  // namespace

extern "C" {

SBD_API const char* sbd_version(void) { return "1.0.0"; }

SBD_API const char* sbd_status_name(sbd_status status) {
  switch (status) {
    case SBD_OK: return "ok";
    case SBD_INVALID_ARGUMENT: return "invalid-argument";
    case SBD_SHAPE_ERROR: return "shape-error";
    case SBD_NUMERIC_ERROR: return "numeric-error";
    case SBD_PARSE_ERROR: return "parse-error";
    case SBD_IO_ERROR: return "io-error";
    case SBD_ALREADY_EXISTS: return "already-exists";
    case SBD_UNSUPPORTED_VERSION: return "unsupported-version";
    case SBD_CHECK_FAILED: return "check-failed";
    case SBD_INTERNAL_ERROR: return "internal-error";
  }
  return "unknown";
}

SBD_API const char* sbd_last_error(void) { return g_last_error.c_str(); }

SBD_API sbd_status sbd_config_parse(const char* yaml_text, sbd_config** out) {
  return guarded([&] {
    require(yaml_text, "yaml_text");
    require(out, "out");
    *out = nullptr;
    auto c = std::make_unique<sbd_config>();
    c->cfg = sbd::parse_config(yaml_text);
    refresh(c.get());
    *out = c.release();
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_load(const char* path, sbd_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    auto c = std::make_unique<sbd_config>();
    c->cfg = sbd::load_config(path);
    refresh(c.get());
    *out = c.release();
    return SBD_OK;
  });
}

SBD_API void sbd_config_free(sbd_config* cfg) { delete cfg; }

SBD_API sbd_status sbd_config_set_domain(sbd_config* cfg, const char* preset) {
  return guarded([&] {
    require(cfg, "cfg");
    require(preset, "preset");
    update(cfg, [&](sbd::ExperimentConfig& c) { c.domain = preset; });
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_set_seeds(sbd_config* cfg, const uint64_t* seeds, size_t n) {
  return guarded([&] {
    require(cfg, "cfg");
    if (n == 0) throw sbd::InvalidArgument("seeds: must not be empty");
    require(seeds, "seeds");
    update(cfg, [&](sbd::ExperimentConfig& c) { c.seeds.assign(seeds, seeds + n); });
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_set_variant(sbd_config* cfg, const char* variant) {
  return guarded([&] {
    require(cfg, "cfg");
    require(variant, "variant");
    update(cfg, [&](sbd::ExperimentConfig& c) { c.variant = sbd::parse_variant(variant); });
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_set_mode(sbd_config* cfg, const char* mode) {
  return guarded([&] {
    require(cfg, "cfg");
    require(mode, "mode");
    update(cfg, [&](sbd::ExperimentConfig& c) { c.optimizer.mode = sbd::parse_mode(mode); });
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_set_output_dir(sbd_config* cfg, const char* dir) {
  return guarded([&] {
    require(cfg, "cfg");
    require(dir, "dir");
    update(cfg, [&](sbd::ExperimentConfig& c) { c.output_dir = dir; });
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_hash(sbd_config* cfg, const char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = cfg->hash.c_str();
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_resolved_json(sbd_config* cfg, const char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = cfg->resolved.c_str();
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_config_output_dir(sbd_config* cfg, const char** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(out, "out");
    *out = cfg->cfg.output_dir.c_str();
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_run(const sbd_config* cfg, const char* command, const char* target, int force,
                           sbd_outcome** out) {
  return guarded([&] {
    require(cfg, "cfg");
    require(command, "command");
    require(out, "out");
    *out = nullptr;
    sbd::RunOptions options;
    options.force = force != 0;
    *out = wrap(sbd::run_command(cfg->cfg, command, target ? target : "", options));
    return (*out)->outcome.passed() ? SBD_OK : SBD_CHECK_FAILED;
  });
}

SBD_API sbd_status sbd_report(const char* out_dir, const char* hash_filter, sbd_outcome** out) {
  return guarded([&] {
    require(out_dir, "out_dir");
    require(out, "out");
    *out = nullptr;
    std::optional<std::string> filter;
    if (hash_filter && *hash_filter) filter = hash_filter;
    *out = wrap(sbd::report(out_dir, filter));
    return (*out)->outcome.passed() ? SBD_OK : SBD_CHECK_FAILED;
  });
}

SBD_API int sbd_outcome_passed(const sbd_outcome* outcome) { return outcome && outcome->outcome.passed() ? 1 : 0; }

SBD_API const char* sbd_outcome_json(const sbd_outcome* outcome) { return outcome ? outcome->json.c_str() : ""; }

SBD_API void sbd_outcome_free(sbd_outcome* outcome) { delete outcome; }

SBD_API sbd_status sbd_dump_preset(const char* name, const char** json_out) {
  return guarded([&] {
    require(name, "name");
    require(json_out, "json_out");
    auto j = sbd::to_json(sbd::preset(name));
    j["format_version"] = sbd::kArtifactFormatVersion;
    g_scratch = j.dump(2);
    *json_out = g_scratch.c_str();
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_accountability_check(size_t num_chains, const size_t* k_set, size_t n_k, uint64_t seed,
                                            size_t* violations, double* max_ratio) {
  return guarded([&] {
    require(k_set, "k_set");
    require(violations, "violations");
    const auto report =
        sbd::monte_carlo_bound_check(num_chains, std::vector<std::size_t>(k_set, k_set + n_k), seed);
    *violations = report.violations;
    if (max_ratio) *max_ratio = report.max_observed_ratio;
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_compute_weights(const double* alphas, size_t n_alpha, int principal_inclusive,
                                       double* weights_out, size_t* n_weights) {
  return guarded([&] {
    require(alphas, "alphas");
    require(weights_out, "weights_out");
    require(n_weights, "n_weights");
    sbd::DelegationChain chain{std::vector<double>(alphas, alphas + n_alpha)};
    const auto w = sbd::compute_weights(chain, principal_inclusive ? sbd::WeightConvention::PrincipalInclusive
                                                                   : sbd::WeightConvention::DelegateOnly);
    std::copy(w.weights.begin(), w.weights.end(), weights_out);
    *n_weights = w.weights.size();
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_spearman(const double* xs, const double* ys, size_t n, double* out) {
  return guarded([&] {
    require(xs, "xs");
    require(ys, "ys");
    require(out, "out");
    *out = sbd::spearman({xs, n}, {ys, n});
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_sea(const double* deltas, const double* sr, const double* te, size_t n, double* out) {
  return guarded([&] {
    require(deltas, "deltas");
    require(sr, "sr");
    require(te, "te");
    require(out, "out");
    std::vector<sbd::ParetoPoint> points(n);
    for (size_t i = 0; i < n; ++i) points[i] = {deltas[i], sr[i], te[i]};
    *out = sbd::sea(points);
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_network_init(int head, size_t input_dim, size_t width, size_t depth, size_t num_agents,
                                    uint64_t seed, sbd_network** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    if (head != 0 && head != 1) throw sbd::InvalidArgument("head must be 0 (policy) or 1 (meta-weight)");
    sbd::NetShape shape;
    shape.head = head == 0 ? sbd::HeadKind::Policy : sbd::HeadKind::MetaWeight;
    shape.input_dim = input_dim;
    shape.width = width;
    shape.depth = depth;
    shape.num_agents = num_agents;
    shape.validate();
    *out = new sbd_network{sbd::init_deterministic(shape, seed)};
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_network_load(const char* path, sbd_network** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new sbd_network{sbd::load_params(path)};
    return SBD_OK;
  });
}

SBD_API sbd_status sbd_network_save(const sbd_network* net, const char* path) {
  return guarded([&] {
    require(net, "net");
    require(path, "path");
    sbd::save_params(net->params, path);
    return SBD_OK;
  });
}

SBD_API size_t sbd_network_parameter_count(const sbd_network* net) { return net ? net->params.values.size() : 0; }

SBD_API sbd_status sbd_network_forward(const sbd_network* net, const double* input, size_t input_dim, double* out,
                                       size_t n_out) {
  return guarded([&] {
    require(net, "net");
    require(input, "input");
    require(out, "out");
    const auto& shape = net->params.shape;
    if (input_dim != shape.input_dim) throw sbd::ShapeError("input length does not match the network");
    if (n_out < shape.output_dim()) throw sbd::ShapeError("output buffer too small");
    const auto r = sbd::forward(net->params, {input, input_dim});
    if (shape.head == sbd::HeadKind::Policy) {
      std::copy(r.agent_probs.begin(), r.agent_probs.end(), out);
      out[r.agent_probs.size()] = r.alpha;
    } else {
      out[0] = r.lambda;
    }
    return SBD_OK;
  });
}

SBD_API void sbd_network_free(sbd_network* net) { delete net; }

}  // extern "C"
