#ifndef BGNN_H
#define BGNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BgnnMode {
  BGNN_MODE_PRED_CLS = 0,
  BGNN_MODE_SG_CLS = 1,
  BGNN_MODE_SG_GEN = 2,
} BgnnMode;

typedef enum BgnnStatus {
  BGNN_STATUS_OK = 0,
  BGNN_STATUS_NULL_POINTER = 1,
  BGNN_STATUS_INVALID_STRING = 2,
  BGNN_STATUS_CONFIG = 3,
  BGNN_STATUS_CHECKPOINT = 4,
  BGNN_STATUS_IO = 5,
  BGNN_STATUS_NON_FINITE = 6,
  BGNN_STATUS_INVALID_INPUT = 7,
  BGNN_STATUS_PANIC = 8,
} BgnnStatus;

/**
 * Opaque dataset manifest.
 */
typedef struct BgnnManifest BgnnManifest;

/**
 * Opaque trained model with the configuration it was built from.
 */
typedef struct BgnnModel BgnnModel;

/**
 * Opaque metrics report.
 */
typedef struct BgnnReport BgnnReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (truncated,
 * always nul-terminated when `len > 0`). Returns the full message length
 * without the terminator, or 0 when there is no error.
 *
 * # Safety
 * `buf` is null or points to `len` writable bytes.
 */
size_t bgnn_last_error(char *buf, size_t len);

/**
 * The piecewise-linear confidence gate `T(x)`.
 */
double bgnn_gate(double x, double alpha, double beta);

/**
 * # Safety
 * `path` is a nul-terminated string; `out` is a writable handle slot.
 */
enum BgnnStatus bgnn_manifest_load(const char *path, struct BgnnManifest **out);

/**
 * Generates a synthetic manifest from the `[synth]` table of a TOML
 * config (defaults when `config_toml` is null).
 *
 * # Safety
 * `config_toml` is null or nul-terminated; `out` is a writable handle slot.
 */
enum BgnnStatus bgnn_manifest_synthesize(const char *config_toml, struct BgnnManifest **out);

/**
 * # Safety
 * `manifest` and `path` are valid.
 */
enum BgnnStatus bgnn_manifest_save(const struct BgnnManifest *manifest, const char *path);

/**
 * Number of images in the manifest, 0 for a null handle.
 *
 * # Safety
 * `manifest` is null or valid.
 */
size_t bgnn_manifest_num_images(const struct BgnnManifest *manifest);

/**
 * # Safety
 * `manifest` is null or a handle not yet freed.
 */
void bgnn_manifest_free(struct BgnnManifest *manifest);

/**
 * Trains a model on `manifest` with the given TOML config (defaults when
 * null).
 *
 * # Safety
 * Pointers are valid; `out` is a writable handle slot.
 */
enum BgnnStatus bgnn_train(const char *config_toml,
                           const struct BgnnManifest *manifest,
                           struct BgnnModel **out);

/**
 * # Safety
 * `path` is nul-terminated; `out` is a writable handle slot.
 */
enum BgnnStatus bgnn_model_load(const char *path, struct BgnnModel **out);

/**
 * # Safety
 * `model` and `path` are valid.
 */
enum BgnnStatus bgnn_model_save(const struct BgnnModel *model, const char *path);

/**
 * # Safety
 * `model` is null or a handle not yet freed.
 */
void bgnn_model_free(struct BgnnModel *model);

/**
 * Evaluates on the test split using `threads` workers (0 = all cores).
 *
 * # Safety
 * Pointers are valid; `out` is a writable handle slot.
 */
enum BgnnStatus bgnn_evaluate(const struct BgnnModel *model,
                              const struct BgnnManifest *manifest,
                              enum BgnnMode mode,
                              size_t threads,
                              struct BgnnReport **out);

/**
 * R@k and mR@k as fractions. Fails when `k` is not one of the report's
 * cutoffs.
 *
 * # Safety
 * `report` is valid; the outputs are null or writable.
 */
enum BgnnStatus bgnn_report_recall(const struct BgnnReport *report,
                                   size_t k,
                                   double *recall,
                                   double *mean_recall);

/**
 * The report as a JSON string, released with [`bgnn_string_free`].
 *
 * # Safety
 * `report` is valid; `out` is a writable slot.
 */
enum BgnnStatus bgnn_report_json(const struct BgnnReport *report, char **out);

/**
 * # Safety
 * `report` is null or a handle not yet freed.
 */
void bgnn_report_free(struct BgnnReport *report);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void bgnn_string_free(char *s);

/**
 * Full-model finite-difference check. `passed` receives 1 or 0.
 *
 * # Safety
 * `config_toml` is null or nul-terminated; outputs are null or writable.
 */
enum BgnnStatus bgnn_gradcheck(const char *config_toml,
                               int inject_bug,
                               int *passed,
                               double *max_rel_err);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* BGNN_H */
