#ifndef LMCOMPRESS_H
#define LMCOMPRESS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes of every fallible call.
 */
typedef enum LmcStatus {
  LMC_STATUS_OK = 0,
  LMC_STATUS_NULL_POINTER = 1,
  LMC_STATUS_INVALID_ARGUMENT = 2,
  LMC_STATUS_IO = 3,
  LMC_STATUS_FORMAT = 4,
  LMC_STATUS_INTEGRITY = 5,
  LMC_STATUS_VERSION = 6,
  LMC_STATUS_CONFIG = 7,
  LMC_STATUS_NUMERIC = 8,
  LMC_STATUS_PANIC = 9,
} LmcStatus;

/**
 * Opaque model handle.
 */
typedef struct LmcModel LmcModel;

/**
 * Accounting of a model; see `lmc_model_stats`.
 */
typedef struct LmcStats {
  uint64_t matrix_params;
  uint64_t bias_params;
  uint64_t total_params;
  uint64_t nonzero_params;
  uint64_t dense_bytes;
  uint64_t stored_bytes;
  uint64_t macs;
} LmcStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next call on the same thread.
 */
const char *lmc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *lmc_version(void);

/**
 * Load a model container.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LmcStatus lmc_model_load(const char *path, struct LmcModel **out);

/**
 * Release a handle. NULL is ignored.
 *
 * # Safety
 * `model` must come from this library and not be used afterwards.
 */
void lmc_model_free(struct LmcModel *model);

/**
 * Write a model container.
 *
 * # Safety
 * `model` must be a live handle and `path` a NUL-terminated string.
 */
enum LmcStatus lmc_model_save(const struct LmcModel *model, const char *path);

/**
 * # Safety
 * `model` must be a live handle and `out` a valid pointer.
 */
enum LmcStatus lmc_model_stats(const struct LmcModel *model, struct LmcStats *out);

/**
 * Multiply-accumulates per inference step; 0 for a NULL handle.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
uint64_t lmc_model_mac_count(const struct LmcModel *model);

/**
 * Vocabulary size; 0 for a NULL handle.
 *
 * # Safety
 * `model` must be a live handle or NULL.
 */
size_t lmc_model_vocab_size(const struct LmcModel *model);

/**
 * Perplexity of predicting `ids[t + 1]` from `ids[..=t]`.
 *
 * # Safety
 * `ids` must point to `len` values and `out` be a valid pointer.
 */
enum LmcStatus lmc_model_perplexity(const struct LmcModel *model,
                                    const uint32_t *ids,
                                    size_t len,
                                    size_t segments,
                                    double *out);

/**
 * Next-token distribution after reading `ids` from the zero state.
 * `probs` must hold `probs_len` ≥ vocabulary-size values.
 *
 * # Safety
 * `ids` must point to `len` values and `probs` to `probs_len` writable values.
 */
enum LmcStatus lmc_model_predict(const struct LmcModel *model,
                                 const uint32_t *ids,
                                 size_t len,
                                 double *probs,
                                 size_t probs_len);

/**
 * Apply a TOML compression spec (without fine-tuning) and return a new handle.
 *
 * # Safety
 * `model` must be a live handle, `spec_toml` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum LmcStatus lmc_model_compress(const struct LmcModel *model,
                                  const char *spec_toml,
                                  struct LmcModel **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LMCOMPRESS_H */
