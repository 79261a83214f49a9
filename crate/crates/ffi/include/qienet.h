#ifndef QIENET_H
#define QIENET_H

/* Generated by cbindgen from qienet-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every qienet call. Zero is success; anything else is an
 * error class mirroring the library's error taxonomy.
 */
typedef enum QienetStatus {
  QIENET_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  QIENET_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  QIENET_STATUS_INVALID_UTF8 = 2,
  /**
   * Tensor or layer shapes do not line up.
   */
  QIENET_STATUS_DIMENSION = 3,
  /**
   * Invalid configuration (bad variant, wrong frame count, …).
   */
  QIENET_STATUS_CONFIG = 4,
  /**
   * Input data violates a documented precondition.
   */
  QIENET_STATUS_INPUT = 5,
  /**
   * An API was used out of order.
   */
  QIENET_STATUS_STATE = 6,
  /**
   * An artifact failed to parse.
   */
  QIENET_STATUS_FORMAT = 7,
  /**
   * A sequence has a hole where a timestep was required.
   */
  QIENET_STATUS_GAP = 8,
  /**
   * A coordinate fell outside the covered domain.
   */
  QIENET_STATUS_BOUNDS = 9,
  /**
   * An integration period is missing required hourly inputs.
   */
  QIENET_STATUS_COVERAGE = 10,
  /**
   * Training produced a non-finite value.
   */
  QIENET_STATUS_DIVERGENCE = 11,
  /**
   * The requested metric is undefined for the given data.
   */
  QIENET_STATUS_UNDEFINED_METRIC = 12,
  /**
   * The operating system reported an I/O failure.
   */
  QIENET_STATUS_IO = 13,
  /**
   * The library panicked; the handle involved must be considered
   * poisoned and freed.
   */
  QIENET_STATUS_PANIC = 14,
} QienetStatus;

/**
 * Opaque handle to a loaded estimation model.
 */
typedef struct QienetModel QienetModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never null; do not
 * free.
 */
const char *qienet_version(void);

/**
 * Stable name of a status code (e.g. "format"). Never null; do not free.
 */
const char *qienet_status_name(enum QienetStatus status);

/**
 * Message describing the most recent failure on the calling thread, as a
 * NUL-terminated string. Empty (not null) if nothing failed yet. The
 * pointer stays valid until the next failing qienet call on the same
 * thread; do not free.
 */
const char *qienet_last_error_message(void);

/**
 * Loads a model checkpoint from `path` (UTF-8, NUL-terminated) and
 * stores the new handle in `*out_model`. On any failure `*out_model` is
 * left untouched. Free the handle with [`qienet_model_free`].
 *
 * # Safety
 *
 * `path` must point to a NUL-terminated string and `out_model` to a
 * writable pointer slot.
 */
enum QienetStatus qienet_model_load(const char *path, struct QienetModel **out_model);

/**
 * Releases a handle returned by [`qienet_model_load`]. Passing null is a
 * no-op. The handle must not be used afterwards.
 *
 * # Safety
 *
 * `model` must be null or a live handle from `qienet_model_load` that
 * has not been freed before.
 */
void qienet_model_free(struct QienetModel *model);

/**
 * Reports the slice tensor shape `[T, C, H, W]` the model expects:
 * `T` frames per sample, at least `C` channels (the model's channel
 * subset indexes into them), and `H`×`W` cells per slice.
 *
 * # Safety
 *
 * `model` must be a live handle; the four out pointers must be writable.
 */
enum QienetStatus qienet_model_input_shape(const struct QienetModel *model,
                                           size_t *out_timesteps,
                                           size_t *out_channels,
                                           size_t *out_height,
                                           size_t *out_width);

/**
 * Estimates GHI in W/m² for one sample and writes it to `*out_ghi`.
 *
 * `slices` holds `timesteps × channels × height × width` values in
 * row-major order (frame, then channel, then row, then column), raw
 * physical units as read from the tiles. `hour` is the UTC hour of day
 * (0–23), `day` and `month` the one-based calendar fields, `altitude`
 * meters above sea level, `longitude`/`latitude` in degrees.
 *
 * # Safety
 *
 * `model` must be a live handle, `slices` must point to `slices_len`
 * readable doubles, and `out_ghi` must be writable.
 */
enum QienetStatus qienet_model_predict(const struct QienetModel *model,
                                       const double *slices,
                                       size_t slices_len,
                                       size_t timesteps,
                                       size_t channels,
                                       size_t height,
                                       size_t width,
                                       uint32_t hour,
                                       uint32_t day,
                                       uint32_t month,
                                       double altitude,
                                       double longitude,
                                       double latitude,
                                       double *out_ghi);

/**
 * Computes agreement metrics between `n` estimated and observed values.
 * Each out pointer may be null to skip that metric; a non-null pointer
 * whose metric is undefined for the data (fewer than two points, zero
 * variance) fails with `QIENET_STATUS_UNDEFINED_METRIC` and writes
 * nothing.
 *
 * # Safety
 *
 * `est` and `obs` must each point to `n` readable doubles; every
 * non-null out pointer must be writable.
 */
enum QienetStatus qienet_metrics(const double *est,
                                 const double *obs,
                                 size_t n,
                                 double *out_rmse,
                                 double *out_mbe,
                                 double *out_r2,
                                 double *out_r);

/**
 * Writes the extraterrestrial GHI bound in W/m² for the hour containing
 * `unix_seconds` (UTC) at the given coordinates to `*out_ghi`.
 *
 * # Safety
 *
 * `out_ghi` must be writable.
 */
enum QienetStatus qienet_extraterrestrial_ghi(int64_t unix_seconds,
                                              double latitude,
                                              double longitude,
                                              double *out_ghi);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QIENET_H */
