#ifndef FEDCORR_H
#define FEDCORR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Outcome of a call.
 */
typedef enum FcStatus {
  FC_STATUS_OK = 0,
  FC_STATUS_NULL_POINTER = 1,
  FC_STATUS_INVALID_ARGUMENT = 2,
  FC_STATUS_CONFIG = 3,
  FC_STATUS_INPUT = 4,
  FC_STATUS_IO = 5,
  FC_STATUS_DIVERGENCE = 6,
  FC_STATUS_DEGENERATE = 7,
  FC_STATUS_OUT_OF_RANGE = 8,
  FC_STATUS_PANIC = 99,
} FcStatus;

/**
 * Experiment configuration handle.
 */
typedef struct FcConfig FcConfig;

/**
 * Experiment result handle.
 */
typedef struct FcResult FcResult;

/**
 * A fitted two-component Gaussian mixture.
 */
typedef struct FcGmmFit {
  double weights[2];
  double means[2];
  double variances[2];
  double log_likelihood;
  size_t n_iters;
} FcGmmFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread; empty after a
 * success. Valid until the next call into this library on the same thread.
 */
const char *fc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fc_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void fc_string_free(char *s);

/**
 * A configuration holding every default.
 */
struct FcConfig *fc_config_default(void);

/**
 * Parses and validates a TOML configuration document.
 *
 * # Safety
 * `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum FcStatus fc_config_from_toml(const char *toml, struct FcConfig **out);

/**
 * Sets one key from its textual value, as the command line would. Only the
 * value's type is checked here; cross-field rules are checked by
 * [`fc_config_validate`] and at run time.
 *
 * # Safety
 * `config` must be a live handle; `key` and `value` NUL-terminated strings.
 */
enum FcStatus fc_config_set(struct FcConfig *config, const char *key, const char *value);

/**
 * Checks every range and cross-field rule.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum FcStatus fc_config_validate(const struct FcConfig *config);

/**
 * The resolved configuration as TOML.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_config_to_toml(const struct FcConfig *config, char **out);

/**
 * Hex SHA-256 identifying the configuration.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_config_hash(const struct FcConfig *config, char **out);

/**
 * Releases a configuration. Null is ignored.
 *
 * # Safety
 * `config` must come from this library and not have been freed.
 */
void fc_config_free(struct FcConfig *config);

/**
 * Runs the configured mode in memory, writing no files.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_run(const struct FcConfig *config, struct FcResult **out);

/**
 * Runs the configured mode and writes the output files into the
 * configuration's `output_dir`.
 *
 * # Safety
 * `config` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_run_and_write(const struct FcConfig *config, struct FcResult **out);

/**
 * Releases a result. Null is ignored.
 *
 * # Safety
 * `result` must come from this library and not have been freed.
 */
void fc_result_free(struct FcResult *result);

/**
 * Test accuracy of the final global model.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_final_accuracy(const struct FcResult *result, double *out);

/**
 * Best test accuracy over all rounds.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_best_accuracy(const struct FcResult *result, double *out);

/**
 * Total communication cost (cumulative participating clients).
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_comm_cost(const struct FcResult *result, size_t *out);

/**
 * Number of communication rounds.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_n_rounds(const struct FcResult *result, size_t *out);

/**
 * Test accuracy after round `index` (0-based).
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_round_accuracy(const struct FcResult *result, size_t index, double *out);

/**
 * Number of clients.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_n_clients(const struct FcResult *result, size_t *out);

/**
 * Copies per-client estimated noise levels into `out[0..capacity]`; writes
 * the client count to `written`. Fails with `FC_STATUS_OUT_OF_RANGE` if
 * `capacity` is too small.
 *
 * # Safety
 * `result` must be a live handle; `out` must hold `capacity` doubles.
 */
enum FcStatus fc_result_estimated_noise(const struct FcResult *result,
                                        double *out,
                                        size_t capacity,
                                        size_t *written);

/**
 * The complete result as JSON.
 *
 * # Safety
 * `result` must be a live handle; `out` must be writable.
 */
enum FcStatus fc_result_to_json(const struct FcResult *result, char **out);

/**
 * Maximum-likelihood LID estimate from ascending positive neighbour
 * distances; `cap` is returned when all distances are equal.
 *
 * # Safety
 * `distances` must hold `k` doubles; `out` must be writable.
 */
enum FcStatus fc_lid_mle(const double *distances, size_t k, double cap, double *out);

/**
 * Fits a two-component 1-D Gaussian mixture by EM with the default
 * iteration limit and tolerance. Identical values give
 * `FC_STATUS_INVALID_ARGUMENT`.
 *
 * # Safety
 * `values` must hold `n` doubles; `out` must be writable.
 */
enum FcStatus fc_fit_gmm2(const double *values, size_t n, struct FcGmmFit *out);

/**
 * Communication cost of a full FedCorr run from the accounting identity,
 * without training.
 */
size_t fc_planned_comm_cost(size_t n_clients,
                            double fraction,
                            size_t t1,
                            size_t t2,
                            size_t t3,
                            size_t n_clean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDCORR_H */
