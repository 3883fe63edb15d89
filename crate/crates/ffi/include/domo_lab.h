#ifndef DOMO_LAB_H
#define DOMO_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum DomoStatus {
  DOMO_STATUS_OK = 0,
  DOMO_STATUS_NULL_POINTER = 1,
  DOMO_STATUS_INVALID_ARGUMENT = 2,
  DOMO_STATUS_DOMAIN = 3,
  DOMO_STATUS_NUMERIC = 4,
  DOMO_STATUS_CONFIG = 5,
  DOMO_STATUS_IO = 6,
  DOMO_STATUS_BUFFER_TOO_SMALL = 7,
  DOMO_STATUS_PANIC = 8,
} DomoStatus;

/**
 * Operator family selector for `trace_kind` arguments. `param` is `c_bar`
 * for V-trace and `lambda` for the two lambda families; tree backup
 * ignores it.
 */
typedef enum DomoTraceKind {
  DOMO_TRACE_KIND_V_TRACE = 0,
  DOMO_TRACE_KIND_TREE_BACKUP = 1,
  DOMO_TRACE_KIND_Q_LAMBDA = 2,
  DOMO_TRACE_KIND_PENG_LAMBDA = 3,
} DomoTraceKind;

/**
 * A finite MDP.
 */
typedef struct DomoMdp DomoMdp;

/**
 * A tabular policy, row-major `[state][action]`.
 */
typedef struct DomoPolicy DomoPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *domo_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated and
 * NUL-terminated when `len > 0`) and returns its full length in bytes.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t domo_last_error(char *buf, size_t len);

/**
 * Samples a random MDP with Dirichlet(alpha) transition rows and standard
 * normal rewards.
 *
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum DomoStatus domo_mdp_random(size_t n_states,
                                size_t n_actions,
                                double alpha,
                                double gamma,
                                uint64_t seed,
                                struct DomoMdp **out);

/**
 * Builds an MDP from `transitions[(x * n_actions + a) * n_states + y]` and
 * `rewards[x * n_actions + a]`.
 *
 * # Safety
 * The arrays must hold `n_states^2 * n_actions` and `n_states * n_actions`
 * values; `out` must be a valid pointer to a handle slot.
 */
enum DomoStatus domo_mdp_new(size_t n_states,
                             size_t n_actions,
                             const double *transitions,
                             const double *rewards,
                             double gamma,
                             struct DomoMdp **out);

/**
 * Parses an MDP from the JSON written by `domo-lab gen-mdp`.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid handle slot.
 */
enum DomoStatus domo_mdp_from_json(const char *json, struct DomoMdp **out);

/**
 * Reports the shape and discount of an MDP. Any out pointer may be null.
 *
 * # Safety
 * `mdp` must be a live handle; non-null out pointers must be writable.
 */
enum DomoStatus domo_mdp_shape(const struct DomoMdp *mdp,
                               size_t *n_states,
                               size_t *n_actions,
                               double *gamma);

/**
 * Releases an MDP handle. Null is ignored.
 *
 * # Safety
 * `mdp` must be null or a handle not yet freed.
 */
void domo_mdp_free(struct DomoMdp *mdp);

/**
 * Builds a policy from row-major probabilities; each row must sum to one.
 *
 * # Safety
 * `probs` must hold `n_states * n_actions` values; `out` must be a valid
 * handle slot.
 */
enum DomoStatus domo_policy_new(size_t n_states,
                                size_t n_actions,
                                const double *probs,
                                struct DomoPolicy **out);

/**
 * The uniform policy.
 *
 * # Safety
 * `out` must be a valid handle slot.
 */
enum DomoStatus domo_policy_uniform(size_t n_states, size_t n_actions, struct DomoPolicy **out);

/**
 * Releases a policy handle. Null is ignored.
 *
 * # Safety
 * `policy` must be null or a handle not yet freed.
 */
void domo_policy_free(struct DomoPolicy *policy);

/**
 * Writes `V^pi` into `out`, which must hold at least `n_states` values.
 *
 * # Safety
 * Handles must be live; `out` must point to `out_len` writable doubles.
 */
enum DomoStatus domo_exact_value(const struct DomoMdp *mdp,
                                 const struct DomoPolicy *policy,
                                 double *out,
                                 size_t out_len);

/**
 * Applies the evaluation operator of target `pi` and behavior `mu` to `v`.
 *
 * # Safety
 * Handles must be live; `v` must hold `v_len` doubles and `out` must point
 * to `out_len` writable doubles.
 */
enum DomoStatus domo_apply_operator(const struct DomoMdp *mdp,
                                    const struct DomoPolicy *pi,
                                    const struct DomoPolicy *mu,
                                    uint32_t trace_kind,
                                    double param,
                                    const double *v,
                                    size_t v_len,
                                    double *out,
                                    size_t out_len);

/**
 * Contraction rate `eta` of the operator (not defined for Peng's lambda).
 *
 * # Safety
 * Handles must be live; `eta` must be writable.
 */
enum DomoStatus domo_contraction_rate(const struct DomoMdp *mdp,
                                      const struct DomoPolicy *pi,
                                      const struct DomoPolicy *mu,
                                      uint32_t trace_kind,
                                      double param,
                                      double *eta);

/**
 * Runs the experiment described by the TOML text `config` (null for all
 * defaults) on `jobs` threads and writes its CSV to `csv_path`.
 *
 * Seeds whose runs failed are counted in `failed_runs` (may be null) and
 * still return `Ok`; a failed audit check is not an error either. Both show
 * up in the CSV.
 *
 * # Safety
 * Strings must be NUL-terminated; `failed_runs` must be null or writable.
 */
enum DomoStatus domo_run_experiment(const char *config,
                                    size_t jobs,
                                    const char *csv_path,
                                    size_t *failed_runs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DOMO_LAB_H */
