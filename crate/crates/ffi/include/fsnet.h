#ifndef FSNET_H
#define FSNET_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FsnetStatus {
  FSNET_STATUS_OK = 0,
  FSNET_STATUS_NULL_POINTER = 1,
  FSNET_STATUS_INVALID_ARGUMENT = 2,
  FSNET_STATUS_SHAPE = 3,
  FSNET_STATUS_CONFIG = 4,
  FSNET_STATUS_IO = 5,
  FSNET_STATUS_FORMAT = 6,
  FSNET_STATUS_DATASET = 7,
  FSNET_STATUS_IMAGE = 8,
  FSNET_STATUS_INTERNAL = 9,
  FSNET_STATUS_PANIC = 10,
} FsnetStatus;

// Trained or freshly initialized network plus its inference settings.
typedef struct FsnetModel FsnetModel;

// Scalar metrics of one prediction. `auc` is NaN when it is undefined or
// no probabilities were given.
typedef struct FsnetMetrics {
  double sensitivity;
  double specificity;
  double f1;
  double accuracy;
  double auc;
  double iou;
  uint64_t tp;
  uint64_t fp;
  uint64_t tn;
  uint64_t fn_;
} FsnetMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message, NUL-terminated, into
// `buf` (truncating to `len` bytes) and returns the full length including
// the terminator. Returns 0 when the last call succeeded.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t fsnet_last_error_message(char *buf, size_t len);

// Library version as a static NUL-terminated string.
const char *fsnet_version(void);

// New model with freshly initialized weights. `config_text` holds
// `key = value` lines overriding the default architecture; null means
// defaults.
//
// # Safety
// `config_text` must be null or a NUL-terminated string; `out` must be a
// valid pointer.
enum FsnetStatus fsnet_model_new(const char *config_text, uint64_t seed, struct FsnetModel **out);

// Loads a checkpoint file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be a valid pointer.
enum FsnetStatus fsnet_model_load(const char *path, struct FsnetModel **out);

// Writes the model, with its inference settings, to a checkpoint file.
//
// # Safety
// `model` must come from this library; `path` must be NUL-terminated.
enum FsnetStatus fsnet_model_save(const struct FsnetModel *model, const char *path);

// Releases a model. Null is ignored.
//
// # Safety
// `model` must be null or a handle from this library not yet freed.
void fsnet_model_free(struct FsnetModel *model);

// Trainable parameter count.
//
// # Safety
// Both pointers must be valid.
enum FsnetStatus fsnet_model_param_count(const struct FsnetModel *model, uint64_t *out);

// Forward-pass FLOPs for a single `height x width` image.
//
// # Safety
// Both pointers must be valid.
enum FsnetStatus fsnet_model_flops(const struct FsnetModel *model,
                                   size_t height,
                                   size_t width,
                                   uint64_t *out);

// Vessel probabilities for one grayscale image. `image` and `probs` hold
// `height * width` floats.
//
// # Safety
// `model` must come from this library and both buffers must hold
// `height * width` floats.
enum FsnetStatus fsnet_model_predict(const struct FsnetModel *model,
                                     const float *image,
                                     size_t height,
                                     size_t width,
                                     float *probs);

// Adaptive threshold search. Foreground is written as 1 into `mask`; the
// chosen threshold goes to `theta` when non-null. `fov` may be null.
//
// # Safety
// `probs` and `mask` (and `fov` when non-null) must hold `height * width`
// elements.
enum FsnetStatus fsnet_adaptive_threshold(const float *probs,
                                          const uint8_t *fov,
                                          size_t height,
                                          size_t width,
                                          double optimum,
                                          uint8_t *mask,
                                          double *theta);

// `mask = probs >= theta`.
//
// # Safety
// `probs` and `mask` must hold `height * width` elements.
enum FsnetStatus fsnet_fixed_threshold(const float *probs,
                                       size_t height,
                                       size_t width,
                                       double theta,
                                       uint8_t *mask);

// Background/foreground ratio of `count` masks of `height x width`,
// stored back to back.
//
// # Safety
// `masks` must hold `count * height * width` bytes.
enum FsnetStatus fsnet_estimate_optimum(const uint8_t *masks,
                                        size_t count,
                                        size_t height,
                                        size_t width,
                                        double *out);

// Metrics of `pred` against `truth`. `probs` may be null, which leaves
// `auc` as NaN; `fov` may be null.
//
// # Safety
// Non-null buffers must hold `height * width` elements; `out` must be valid.
enum FsnetStatus fsnet_metrics(const uint8_t *pred,
                               const uint8_t *truth,
                               const float *probs,
                               const uint8_t *fov,
                               size_t height,
                               size_t width,
                               struct FsnetMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FSNET_H */
