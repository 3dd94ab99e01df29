#ifndef PLACEKD_H
#define PLACEKD_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Result of an FFI call. Library failures keep the numeric code of the
 * underlying error kind.
 */
typedef enum PkdStatus {
  PKD_STATUS_OK = 0,
  PKD_STATUS_NULL_POINTER = 1,
  PKD_STATUS_INVALID_ARGUMENT = 2,
  PKD_STATUS_PANIC = 3,
  PKD_STATUS_CONFIG = 10,
  PKD_STATUS_MISSING_PARAM = 11,
  PKD_STATUS_SHAPE = 20,
  PKD_STATUS_INVALID_TENSOR = 21,
  PKD_STATUS_DEGENERATE = 22,
  PKD_STATUS_NON_FINITE = 23,
  PKD_STATUS_BACKWARD = 24,
  PKD_STATUS_FROZEN_TEACHER = 25,
  PKD_STATUS_DIVERGED = 26,
  PKD_STATUS_EMPTY_MINING = 30,
  PKD_STATUS_FORMAT = 31,
  PKD_STATUS_INTEGRITY = 32,
  PKD_STATUS_IO = 33,
  PKD_STATUS_JSON = 34,
  PKD_STATUS_DATASET_VERSION = 41,
  PKD_STATUS_CHECKPOINT_VERSION = 42,
  PKD_STATUS_DATABASE_VERSION = 43,
} PkdStatus;

/**
 * An immutable descriptor database.
 */
typedef struct PkdDatabase PkdDatabase;

/**
 * A loaded checkpoint ready for inference.
 */
typedef struct PkdModel PkdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pkd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pkd_version(void);

/**
 * Loads a checkpoint file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PkdStatus pkd_model_load(const char *path, struct PkdModel **out);

/**
 * # Safety
 * `model` must come from [`pkd_model_load`] and not be used afterwards.
 */
void pkd_model_free(struct PkdModel *model);

/**
 * Descriptor width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t pkd_model_descriptor_width(const struct PkdModel *model);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t pkd_model_param_count(const struct PkdModel *model);

/**
 * Writes the expected image shape (channels, height, width) to `shape[0..3]`.
 *
 * # Safety
 * `model` must be a live handle and `shape` must point to 3 writable values.
 */
enum PkdStatus pkd_model_image_shape(const struct PkdModel *model, uintptr_t *shape);

/**
 * Describes one C×H×W row-major image of `image_len` values into `out`,
 * which must hold `out_len ≥ width` values.
 *
 * # Safety
 * `image` must point to `image_len` readable floats and `out` to `out_len`
 * writable floats.
 */
enum PkdStatus pkd_model_describe(const struct PkdModel *model,
                                  const float *image,
                                  uintptr_t image_len,
                                  float *out,
                                  uintptr_t out_len);

/**
 * Loads a database file into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PkdStatus pkd_database_load(const char *path, struct PkdDatabase **out);

/**
 * Describes the database split of the dataset directory `dataset_dir`.
 *
 * # Safety
 * `model` must be a live handle, `dataset_dir` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum PkdStatus pkd_database_build(const struct PkdModel *model,
                                  const char *dataset_dir,
                                  struct PkdDatabase **out);

/**
 * # Safety
 * `db` must be a live handle and `path` a NUL-terminated string.
 */
enum PkdStatus pkd_database_save(const struct PkdDatabase *db, const char *path);

/**
 * # Safety
 * `db` must come from a `pkd_database_*` constructor and not be used
 * afterwards.
 */
void pkd_database_free(struct PkdDatabase *db);

/**
 * Number of rows, or 0 for a null handle.
 *
 * # Safety
 * `db` must be null or a live handle.
 */
uintptr_t pkd_database_len(const struct PkdDatabase *db);

/**
 * Descriptor width, or 0 for a null handle.
 *
 * # Safety
 * `db` must be null or a live handle.
 */
uintptr_t pkd_database_width(const struct PkdDatabase *db);

/**
 * Exact top-`n` search. Writes ids and Euclidean distances in ascending
 * order, ties broken by lower id. Safe to call concurrently on one handle.
 *
 * # Safety
 * `query` must point to `query_len` readable floats; `ids` and `distances`
 * to `n` writable values each.
 */
enum PkdStatus pkd_database_search(const struct PkdDatabase *db,
                                   const float *query,
                                   uintptr_t query_len,
                                   uintptr_t n,
                                   uint64_t *ids,
                                   float *distances);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PLACEKD_H */
