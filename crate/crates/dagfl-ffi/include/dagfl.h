/* dagfl C API. Generated by cbindgen; do not edit. */

#ifndef DAGFL_H
#define DAGFL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum DagflStatus {
  DAGFL_STATUS_OK = 0,
  /**
   * A required pointer argument was NULL.
   */
  DAGFL_STATUS_NULL_ARGUMENT = 1,
  /**
   * An argument failed validation (bad UTF-8, bad hex, unknown policy).
   */
  DAGFL_STATUS_INVALID_ARGUMENT = 2,
  /**
   * The configuration failed to load or validate.
   */
  DAGFL_STATUS_CONFIG_ERROR = 3,
  /**
   * The simulation failed.
   */
  DAGFL_STATUS_RUNTIME_ERROR = 4,
  /**
   * Verification ran and rejected the path.
   */
  DAGFL_STATUS_VERIFICATION_FAILED = 5,
  /**
   * The requested artifact does not exist for this run (e.g. the ledger
   * of a baseline policy).
   */
  DAGFL_STATUS_NOT_AVAILABLE = 6,
} DagflStatus;

/**
 * Opaque configuration handle.
 */
typedef struct DagflConfig DagflConfig;

/**
 * Opaque handle to a finished run.
 */
typedef struct DagflRun DagflRun;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string; do not free.
 */
const char *dagfl_version(void);

/**
 * Last error message for this thread, or NULL when no error is recorded.
 * Free the result with `dagfl_string_free`.
 */
char *dagfl_last_error_message(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must have been returned by a dagfl function returning an owned string
 * and not freed before. NULL is accepted and ignored.
 */
void dagfl_string_free(char *s);

/**
 * Creates a configuration with every knob at its default.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum DagflStatus dagfl_config_default(struct DagflConfig **out);

/**
 * Loads a flat `key = value` configuration file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 */
enum DagflStatus dagfl_config_load(const char *path, struct DagflConfig **out);

/**
 * # Safety
 * `config` must be a live handle from `dagfl_config_*`.
 */
enum DagflStatus dagfl_config_set_seed(struct DagflConfig *config, uint64_t seed);

/**
 * Selects the coordination policy by name (`dag-afl`, `centralized`,
 * `independent`, `sync-fedavg`, `pure-async`).
 *
 * # Safety
 * `config` must be a live handle; `policy` a NUL-terminated string.
 */
enum DagflStatus dagfl_config_set_policy(struct DagflConfig *config, const char *policy);

/**
 * # Safety
 * `config` must be a live handle or NULL (ignored).
 */
void dagfl_config_free(struct DagflConfig *config);

/**
 * Executes the configured run and hands back a result handle.
 *
 * # Safety
 * `config` must be a live handle; `out` must be a valid pointer.
 */
enum DagflStatus dagfl_run(const struct DagflConfig *config, struct DagflRun **out);

/**
 * # Safety
 * `run` must be a live handle from `dagfl_run`.
 */
double dagfl_run_final_accuracy(const struct DagflRun *run);

/**
 * # Safety
 * `run` must be a live handle from `dagfl_run`.
 */
double dagfl_run_uploads_per_sec(const struct DagflRun *run);

/**
 * # Safety
 * `run` must be a live handle from `dagfl_run`.
 */
double dagfl_run_mean_latency(const struct DagflRun *run);

/**
 * Writes the time-to-target into `out` and returns true, or returns false
 * when the target was never reached (or no target was configured).
 *
 * # Safety
 * `run` must be a live handle; `out` a valid pointer.
 */
bool dagfl_run_time_to_target(const struct DagflRun *run, double *out);

/**
 * Summary metrics as a JSON string; free with `dagfl_string_free`.
 *
 * # Safety
 * `run` must be a live handle; `out` a valid pointer.
 */
enum DagflStatus dagfl_run_summary_json(const struct DagflRun *run, char **out);

/**
 * The JSON-lines ledger export; free with `dagfl_string_free`. Baseline
 * policies have no ledger and yield `NotAvailable`.
 *
 * # Safety
 * `run` must be a live handle; `out` a valid pointer.
 */
enum DagflStatus dagfl_run_ledger_jsonl(const struct DagflRun *run, char **out);

/**
 * The replay event log as JSON lines; free with `dagfl_string_free`.
 *
 * # Safety
 * `run` must be a live handle; `out` a valid pointer.
 */
enum DagflStatus dagfl_run_replay_jsonl(const struct DagflRun *run, char **out);

/**
 * # Safety
 * `run` must be a live handle or NULL (ignored).
 */
void dagfl_run_free(struct DagflRun *run);

/**
 * Verifies a ledger export file against a trusted tip digest.
 *
 * Returns `Ok` when the reconstructed path is accepted. On
 * `VerificationFailed`, `tampered_at` (when non-NULL) receives the id of
 * the first inconsistent node, or `UINT64_MAX` when the tip digest is not
 * present in the export at all.
 *
 * # Safety
 * `export_path` and `tip_digest_hex` must be NUL-terminated strings;
 * `tampered_at` may be NULL.
 */
enum DagflStatus dagfl_verify_export(const char *export_path,
                                     const char *tip_digest_hex,
                                     uint64_t *tampered_at);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DAGFL_H */
