#ifndef ONESTREAM_H
#define ONESTREAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OstStatus {
  OST_STATUS_OK = 0,
  OST_STATUS_NULL_POINTER = 1,
  OST_STATUS_INVALID_ARGUMENT = 2,
  OST_STATUS_IO = 3,
  OST_STATUS_FORMAT = 4,
  OST_STATUS_NUMERICAL = 5,
  OST_STATUS_LEAKAGE = 6,
  OST_STATUS_PANIC = 7,
} OstStatus;

/**
 * A loaded model: parameters, architecture and tracker settings.
 */
typedef struct OstModel OstModel;

/**
 * Tracking state of one object; keeps its model alive.
 */
typedef struct OstTracker OstTracker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ost_version(void);

/**
 * Message of the last failed call on this thread, or null after a success.
 * Valid until the next call on the same thread.
 */
const char *ost_last_error(void);

/**
 * Rotated 3D intersection over union of two boxes.
 *
 * # Safety
 * `a` and `b` point to 7 doubles; `out` is writable.
 */
enum OstStatus ost_box_iou(const double *a, const double *b, double *out);

/**
 * Loads a checkpoint written by the trainer (directory or manifest path).
 *
 * # Safety
 * `path` is a NUL-terminated string; `out` is writable. Free the model with [`ost_model_free`].
 */
enum OstStatus ost_model_load(const char *path, struct OstModel **out);

/**
 * Builds a freshly initialized model from a TOML experiment config (null for defaults).
 *
 * # Safety
 * `config_toml` is null or a NUL-terminated string; `out` is writable.
 */
enum OstStatus ost_model_init(const char *config_toml, uint64_t seed, struct OstModel **out);

/**
 * Number of trainable parameters.
 *
 * # Safety
 * `model` comes from this library; `out` is writable.
 */
enum OstStatus ost_model_param_count(const struct OstModel *model, uint64_t *out);

/**
 * Releases a model. Trackers created from it stay valid. Null is ignored.
 *
 * # Safety
 * `model` comes from this library and is not used afterwards.
 */
void ost_model_free(struct OstModel *model);

/**
 * Starts tracking the object in `first_box` within the first frame's points.
 *
 * # Safety
 * `points` holds `3 * n_points` doubles (may be null when `n_points` is 0);
 * `first_box` holds 7 doubles; `out` is writable. Free with [`ost_tracker_free`].
 */
enum OstStatus ost_tracker_new(const struct OstModel *model,
                               const double *points,
                               size_t n_points,
                               const double *first_box,
                               struct OstTracker **out);

/**
 * Predicts the box in the next frame and writes it to `out_box`.
 *
 * # Safety
 * `tracker` comes from this library; `points` holds `3 * n_points` doubles;
 * `out_box` has room for 7 doubles.
 */
enum OstStatus ost_tracker_update(struct OstTracker *tracker,
                                  const double *points,
                                  size_t n_points,
                                  double *out_box);

/**
 * Releases a tracker. Null is ignored.
 *
 * # Safety
 * `tracker` comes from this library and is not used afterwards.
 */
void ost_tracker_free(struct OstTracker *tracker);

/**
 * Success and Precision (percent) of one sequence of `n_frames` boxes; frame 0 is not scored.
 *
 * # Safety
 * `preds` and `gts` hold `7 * n_frames` doubles; `success` and `precision` are writable.
 */
enum OstStatus ost_evaluate(const double *preds,
                            const double *gts,
                            size_t n_frames,
                            double *success,
                            double *precision);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONESTREAM_H */
