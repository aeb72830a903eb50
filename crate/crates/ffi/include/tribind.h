#ifndef TRIBIND_H
#define TRIBIND_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Label result: `class_index >= 0` for a class, otherwise excluded.
 */
#define TRIBIND_LABEL_DISALLOWED -1

#define TRIBIND_LABEL_NO_KEYWORD -2

/**
 * Result codes.
 */
typedef enum TribindStatus {
  TRIBIND_STATUS_OK = 0,
  TRIBIND_STATUS_NULL_POINTER = 1,
  TRIBIND_STATUS_INVALID_ARGUMENT = 2,
  TRIBIND_STATUS_SHAPE_MISMATCH = 3,
  TRIBIND_STATUS_NORM_VIOLATION = 4,
  TRIBIND_STATUS_IO_ERROR = 5,
  TRIBIND_STATUS_SCHEMA_MISMATCH = 6,
  TRIBIND_STATUS_BUFFER_TOO_SMALL = 7,
  TRIBIND_STATUS_RUNTIME_ERROR = 8,
  TRIBIND_STATUS_PANIC = 9,
} TribindStatus;

/**
 * Opaque dataset handle.
 */
typedef struct TribindDataset TribindDataset;

/**
 * Opaque model handle.
 */
typedef struct TribindModel TribindModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tribind_version(void);

/**
 * Message for the last failure on this thread, or NULL. Valid until the
 * next failing call on the same thread.
 */
const char *tribind_last_error_message(void);

/**
 * Loads a dataset file. On success `*out` owns a new handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TribindStatus tribind_dataset_load(const char *path, struct TribindDataset **out);

/**
 * Generates a synthetic dataset with default settings apart from the
 * given fields.
 *
 * # Safety
 * `out` must be writable.
 */
enum TribindStatus tribind_dataset_generate(size_t num_records,
                                            size_t num_classes,
                                            double pairing_rate,
                                            double duplicate_text_rate,
                                            uint64_t seed,
                                            struct TribindDataset **out);

/**
 * # Safety
 * `ds` must be a live handle; `path` a NUL-terminated string.
 */
enum TribindStatus tribind_dataset_save(const struct TribindDataset *ds, const char *path);

/**
 * Record count, or 0 for a NULL handle.
 *
 * # Safety
 * `ds` must be NULL or a live handle.
 */
size_t tribind_dataset_len(const struct TribindDataset *ds);

/**
 * Releases a dataset handle; NULL is ignored.
 *
 * # Safety
 * `ds` must be NULL or a handle not yet freed.
 */
void tribind_dataset_free(struct TribindDataset *ds);

/**
 * Loads a model checkpoint.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TribindStatus tribind_model_load(const char *path, struct TribindModel **out);

/**
 * Freshly initialized (untrained) model sized for a dataset.
 *
 * # Safety
 * `ds` must be a live handle; `out` must be writable.
 */
enum TribindStatus tribind_model_init(const struct TribindDataset *ds,
                                      uint64_t seed,
                                      struct TribindModel **out);

/**
 * Shared embedding dimension, or 0 for a NULL handle.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t tribind_model_embed_dim(const struct TribindModel *model);

/**
 * Releases a model handle; NULL is ignored.
 *
 * # Safety
 * `model` must be NULL or a handle not yet freed.
 */
void tribind_model_free(struct TribindModel *model);

/**
 * Unit-norm text embedding written to `out` (at least embed_dim values).
 *
 * # Safety
 * `model` live; `text` NUL-terminated; `out` holds `out_len` doubles.
 */
enum TribindStatus tribind_model_embed_text(const struct TribindModel *model,
                                            const char *text,
                                            double *out,
                                            size_t out_len);

/**
 * Unit-norm image embedding of a row-major grid payload.
 *
 * # Safety
 * `model` live; `payload` holds `len` doubles; `out` holds `out_len`.
 */
enum TribindStatus tribind_model_embed_image(const struct TribindModel *model,
                                             const double *payload,
                                             size_t len,
                                             double *out,
                                             size_t out_len);

/**
 * Unit-norm sequence embedding of a flattened payload.
 *
 * # Safety
 * `model` live; `payload` holds `len` doubles; `out` holds `out_len`.
 */
enum TribindStatus tribind_model_embed_sequence(const struct TribindModel *model,
                                                const double *payload,
                                                size_t len,
                                                double *out,
                                                size_t out_len);

/**
 * One TMCL direction over `n` unit rows of width `d`. Rows with equal
 * `group_ids` are mutual positives. Gradient buffers may be NULL.
 *
 * # Safety
 * `anchors`/`targets` hold n·d doubles, `group_ids` n values, `value` is
 * writable, non-NULL gradient buffers hold n·d doubles.
 */
enum TribindStatus tribind_tmcl_direction(const double *anchors,
                                          const double *targets,
                                          size_t n,
                                          size_t d,
                                          const uint64_t *group_ids,
                                          double tau,
                                          double *value,
                                          double *grad_anchors,
                                          double *grad_targets);

/**
 * Symmetric TMCL (text→modality plus modality→text).
 *
 * # Safety
 * As for [`tribind_tmcl_direction`].
 */
enum TribindStatus tribind_tmcl_symmetric(const double *text,
                                          const double *modality,
                                          size_t n,
                                          size_t d,
                                          const uint64_t *group_ids,
                                          double tau,
                                          double *value,
                                          double *grad_text,
                                          double *grad_modality);

/**
 * Symmetric EMCL. `pairs` holds `m` (image row, sequence row) index
 * pairs flattened as 2·m values; `batch_size` is the n of the n/m factor.
 *
 * # Safety
 * `image` holds image_rows·d doubles, `sequence` sequence_rows·d,
 * `pairs` 2·m values; non-NULL gradient buffers match their inputs.
 */
enum TribindStatus tribind_emcl(const double *image,
                                size_t image_rows,
                                const double *sequence,
                                size_t sequence_rows,
                                size_t d,
                                const uint64_t *pairs,
                                size_t m,
                                size_t batch_size,
                                double tau,
                                double *value,
                                double *grad_image,
                                double *grad_sequence);

/**
 * Labels report text with the bundled rule set. `*class_index` receives
 * the class position (0 = NORM, 1 = HYP, 2 = STTC, 3 = MI, 4 = CD) or
 * `TRIBIND_LABEL_DISALLOWED` / `TRIBIND_LABEL_NO_KEYWORD`.
 *
 * # Safety
 * `text` NUL-terminated; `class_index` writable.
 */
enum TribindStatus tribind_label_text(const char *text, int32_t *class_index);

/**
 * Runs the built-in gradient and identity suite; `*failed` receives the
 * number of failing checks.
 *
 * # Safety
 * `failed` writable.
 */
enum TribindStatus tribind_selfcheck(uint64_t seed, size_t *failed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TRIBIND_H */
