#ifndef EVODPO_FFI_H
#define EVODPO_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EvodpoStatus {
  EVODPO_STATUS_OK = 0,
  EVODPO_STATUS_NULL_POINTER = 1,
  EVODPO_STATUS_INVALID_ARGUMENT = 2,
  EVODPO_STATUS_DIMENSION_MISMATCH = 3,
  EVODPO_STATUS_SUPPORT = 4,
  EVODPO_STATUS_CONVERGENCE = 5,
  EVODPO_STATUS_CONFIG = 6,
  EVODPO_STATUS_IO = 7,
  EVODPO_STATUS_UTF8 = 8,
  EVODPO_STATUS_INTERNAL = 9,
  EVODPO_STATUS_PANIC = 10,
} EvodpoStatus;

/**
 * Opaque run configuration.
 */
typedef struct EvodpoConfig EvodpoConfig;

/**
 * Opaque result of one seeded run.
 */
typedef struct EvodpoRun EvodpoRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. Valid until the next
 * failing call on the same thread.
 */
const char *evodpo_last_error(void);

/**
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void evodpo_string_free(char *s);

/**
 * Trust-region gate: writes 1 to `out_accept` iff `delta_s >= eps_s` and
 * `kl_hat <= delta_h`, else 0.
 *
 * # Safety
 * `out_accept` must be valid for writes.
 */
enum EvodpoStatus evodpo_gate(double delta_s,
                              double kl_hat,
                              double eps_s,
                              double delta_h,
                              int32_t *out_accept);

/**
 * `out[i] ∝ pi_ref[i]·exp(u[i]/beta)` over `k` actions.
 *
 * # Safety
 * `pi_ref` and `u` must be readable and `out` writable for `k` doubles.
 */
enum EvodpoStatus evodpo_gibbs(const double *pi_ref,
                               const double *u,
                               uintptr_t k,
                               double beta,
                               double *out);

/**
 * `KL(p ‖ q)` over `k` actions.
 *
 * # Safety
 * `p` and `q` must be readable for `k` doubles and `out` writable.
 */
enum EvodpoStatus evodpo_kl(const double *p, const double *q, uintptr_t k, double *out);

/**
 * Parses `key = value` config text (NUL-terminated UTF-8). An empty string
 * gives the defaults.
 *
 * # Safety
 * `text` must be a valid C string and `out` valid for writes.
 */
enum EvodpoStatus evodpo_config_parse(const char *text, struct EvodpoConfig **out);

/**
 * # Safety
 * `cfg` must come from [`evodpo_config_parse`] and not have been freed.
 */
void evodpo_config_free(struct EvodpoConfig *cfg);

/**
 * Runs the configured mode for one seed.
 *
 * # Safety
 * `cfg` must be a live config handle and `out` valid for writes.
 */
enum EvodpoStatus evodpo_run(const struct EvodpoConfig *cfg, uint64_t seed, struct EvodpoRun **out);

/**
 * # Safety
 * `run` must come from [`evodpo_run`] and not have been freed.
 */
void evodpo_run_free(struct EvodpoRun *run);

/**
 * Final metric of the run: cumulative regret, NMR, or share of passed
 * lemma checks depending on the mode.
 *
 * # Safety
 * `run` must be a live run handle and `out` valid for writes.
 */
enum EvodpoStatus evodpo_run_final_metric(const struct EvodpoRun *run, double *out);

/**
 * Per-step ledger CSV; an empty string for modes without a ledger.
 *
 * # Safety
 * `run` must be a live run handle and `out` valid for writes. Free the
 * result with [`evodpo_string_free`].
 */
enum EvodpoStatus evodpo_run_ledger_csv(const struct EvodpoRun *run, char **out);

/**
 * Per-phase CSV (header only when the mode has no phases).
 *
 * # Safety
 * As for [`evodpo_run_ledger_csv`].
 */
enum EvodpoStatus evodpo_run_phases_csv(const struct EvodpoRun *run, char **out);

/**
 * Runs the default lemma checks for `seed` and returns their reports as a
 * JSON array.
 *
 * # Safety
 * `out` must be valid for writes. Free the result with
 * [`evodpo_string_free`].
 */
enum EvodpoStatus evodpo_verify_json(uint64_t seed, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EVODPO_FFI_H */
