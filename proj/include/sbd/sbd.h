// SPDX-License-Identifier: Apache-2.0
/*
 * C interface to the safe bounded delegation library.
 *
 * Every function returns an sbd_status. On failure a message describing the
 * error is available from sbd_last_error() on the calling thread until the
 * next call into the library. Handles are opaque and owned by the caller;
 * release them with the matching *_free function (NULL is accepted).
 * Strings returned through `const char**` out-parameters stay valid until the
 * owning handle is freed.
 */
#ifndef SBD_SBD_H
#define SBD_SBD_H

#include <stddef.h>
#include <stdint.h>

#if defined(SBD_BUILDING_LIBRARY)
#define SBD_API __attribute__((visibility("default")))
#else
#define SBD_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sbd_status {
  SBD_OK = 0,
  SBD_INVALID_ARGUMENT = 1,
  SBD_SHAPE_ERROR = 2,
  SBD_NUMERIC_ERROR = 3,
  SBD_PARSE_ERROR = 4,
  SBD_IO_ERROR = 5,
  SBD_ALREADY_EXISTS = 6,
  SBD_UNSUPPORTED_VERSION = 7,
  SBD_CHECK_FAILED = 8, /* the command ran but at least one check did not pass */
  SBD_INTERNAL_ERROR = 99
} sbd_status;

typedef struct sbd_config sbd_config;
typedef struct sbd_outcome sbd_outcome;
typedef struct sbd_network sbd_network;

SBD_API const char* sbd_version(void);
SBD_API const char* sbd_status_name(sbd_status status);
/* Message of the last failed call on this thread; "" after a success. */
SBD_API const char* sbd_last_error(void);

/* ---- experiment configuration ---------------------------------------- */

/* Strict YAML; an empty document yields the defaults. */
SBD_API sbd_status sbd_config_parse(const char* yaml_text, sbd_config** out);
SBD_API sbd_status sbd_config_load(const char* path, sbd_config** out);
SBD_API void sbd_config_free(sbd_config* cfg);

/* Setters revalidate; on failure the handle is left unchanged. */
SBD_API sbd_status sbd_config_set_domain(sbd_config* cfg, const char* preset);
SBD_API sbd_status sbd_config_set_seeds(sbd_config* cfg, const uint64_t* seeds, size_t n);
SBD_API sbd_status sbd_config_set_variant(sbd_config* cfg, const char* variant);
/* "first-order" or "truncated-unroll". */
SBD_API sbd_status sbd_config_set_mode(sbd_config* cfg, const char* mode);
SBD_API sbd_status sbd_config_set_output_dir(sbd_config* cfg, const char* dir);

/* Hex SHA-256 of the resolved configuration (seeds and output directory
 * excluded). */
SBD_API sbd_status sbd_config_hash(sbd_config* cfg, const char** out);
SBD_API sbd_status sbd_config_resolved_json(sbd_config* cfg, const char** out);
SBD_API sbd_status sbd_config_output_dir(sbd_config* cfg, const char** out);

/* ---- commands ---------------------------------------------------------- */

/*
 * command: train | sweep-delta | ablate | validate | dump-preset.
 * target:  validation test for "validate" (monotonicity, convergence,
 *          accountability, ablation-ordering), otherwise NULL or "".
 * Returns SBD_OK when every run completed and every check passed,
 * SBD_CHECK_FAILED when the outcome holds failures, or an error status when
 * the command could not start (in which case *out is NULL).
 */
SBD_API sbd_status sbd_run(const sbd_config* cfg, const char* command, const char* target, int force,
                           sbd_outcome** out);
/* Aggregates the run records under out_dir (hash_filter may be NULL). */
SBD_API sbd_status sbd_report(const char* out_dir, const char* hash_filter, sbd_outcome** out);
SBD_API int sbd_outcome_passed(const sbd_outcome* outcome);
SBD_API const char* sbd_outcome_json(const sbd_outcome* outcome);
SBD_API void sbd_outcome_free(sbd_outcome* outcome);

/* Named preset as JSON. The string is owned by the library and stays valid
 * until the next call on this thread. */
SBD_API sbd_status sbd_dump_preset(const char* name, const char** json_out);

/* ---- numerics ---------------------------------------------------------- */

/*
 * Monte Carlo check of max_j w_j <= 1 - (1 - max alpha)^k over num_chains
 * chains with k drawn from k_set. *violations receives the count and
 * *max_ratio the largest observed weight/bound ratio.
 */
SBD_API sbd_status sbd_accountability_check(size_t num_chains, const size_t* k_set, size_t n_k, uint64_t seed,
                                            size_t* violations, double* max_ratio);
/*
 * Accountability weights of a chain with k = n_alpha delegation degrees.
 * principal_inclusive != 0: k + 1 weights (w_0 first) summing to 1;
 * otherwise the k delegate-only weights summing to alpha_1.
 * weights_out must hold k + 1 doubles; *n_weights receives the count.
 */
SBD_API sbd_status sbd_compute_weights(const double* alphas, size_t n_alpha, int principal_inclusive,
                                       double* weights_out, size_t* n_weights);
SBD_API sbd_status sbd_spearman(const double* xs, const double* ys, size_t n, double* out);
/* Safety-efficiency area over (delta, sr, te) triples. */
SBD_API sbd_status sbd_sea(const double* deltas, const double* sr, const double* te, size_t n, double* out);

/* Deterministic network initialization. head: 0 policy, 1 meta-weight. */
SBD_API sbd_status sbd_network_init(int head, size_t input_dim, size_t width, size_t depth, size_t num_agents,
                                    uint64_t seed, sbd_network** out);
SBD_API sbd_status sbd_network_load(const char* path, sbd_network** out);
SBD_API sbd_status sbd_network_save(const sbd_network* net, const char* path);
SBD_API size_t sbd_network_parameter_count(const sbd_network* net);
/*
 * Forward pass on one input of length input_dim. Policy head: out receives
 * num_agents probabilities followed by alpha (n_out >= num_agents + 1).
 * Meta-weight head: out[0] receives lambda (n_out >= 1).
 */
SBD_API sbd_status sbd_network_forward(const sbd_network* net, const double* input, size_t input_dim, double* out,
                                       size_t n_out);
SBD_API void sbd_network_free(sbd_network* net);

#ifdef __cplusplus
}
#endif

#endif /* SBD_SBD_H */
