#ifndef ANCHORSEG_H
#define ANCHORSEG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  ASG_STATUS_OK = 0,
  ASG_STATUS_NULL_POINTER = 1,
  ASG_STATUS_INVALID_ARGUMENT = 2,
  ASG_STATUS_SHAPE_MISMATCH = 3,
  ASG_STATUS_IO = 4,
  ASG_STATUS_DATA = 5,
  ASG_STATUS_CHECKPOINT = 6,
  ASG_STATUS_NUMERICAL = 7,
  ASG_STATUS_PANIC = 8,
} AsgStatus;

/**
 * Opaque trained segmentation network.
 */
typedef struct AsgModel AsgModel;

/**
 * Opaque probability map with values in `[0, 1]`.
 */
typedef struct AsgProbMap AsgProbMap;

/**
 * Borrowed inputs for one frame of a pair. `features` is pixel-major,
 * `height * width * channels` values.
 */
typedef struct {
  const AsgProbMap *prediction;
  const double *features;
  size_t channels;
  const AsgProbMap *positive;
  const AsgProbMap *negative;
} AsgFrameInputs;

/**
 * Objective components for one frame pair.
 */
typedef struct {
  double anchor_a;
  double anchor_b;
  double diffusion_fg;
  double diffusion_bg;
  double total;
  /**
   * Non-zero when a pooled region descriptor was the zero vector.
   */
  int32_t degenerate;
} AsgLosses;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t asg_last_error_message(char *buf, size_t len);

/**
 * Creates a map from `height * width` row-major values in `[0, 1]`.
 *
 * # Safety
 * `values` must point to `height * width` doubles; `out` must be writable.
 */
AsgStatus asg_prob_map_new(size_t height, size_t width, const double *values, AsgProbMap **out);

/**
 * # Safety
 * `map` must be null or a handle returned by this library, not yet freed.
 */
void asg_prob_map_free(AsgProbMap *map);

/**
 * # Safety
 * `map` must be a live handle; `height` and `width` must be writable.
 */
AsgStatus asg_prob_map_shape(const AsgProbMap *map, size_t *height, size_t *width);

/**
 * Copies the values into `out`, which must hold exactly `len == height * width` doubles.
 *
 * # Safety
 * `map` must be a live handle and `out` must point to `len` writable doubles.
 */
AsgStatus asg_prob_map_values(const AsgProbMap *map, double *out, size_t len);

/**
 * Color cue of an interleaved 8-bit RGB image.
 *
 * # Safety
 * `rgb` must point to `height * width * 3` bytes; `out` must be writable.
 */
AsgStatus asg_color_cue(size_t height, size_t width, const uint8_t *rgb, AsgProbMap **out);

/**
 * Fuses `count` cue maps: `positive = prod c`, `negative = prod (1 - c)`.
 *
 * # Safety
 * `cues` must point to `count` live handles; both outputs must be writable.
 */
AsgStatus asg_fuse_anchors(const AsgProbMap *const *cues,
                           size_t count,
                           AsgProbMap **positive,
                           AsgProbMap **negative);

/**
 * Anchor loss of a prediction map.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
AsgStatus asg_anchor_loss(const AsgProbMap *prediction,
                          const AsgProbMap *positive,
                          const AsgProbMap *negative,
                          double *out);

/**
 * All objective components for a frame pair with the given margins.
 *
 * # Safety
 * `a` and `b` must point to valid inputs whose feature buffers hold
 * `height * width * channels` doubles; `out` must be writable.
 */
AsgStatus asg_pair_losses(const AsgFrameInputs *a,
                          const AsgFrameInputs *b,
                          double margin_fg,
                          double margin_bg,
                          AsgLosses *out);

/**
 * Otsu binarization. Writes the threshold and `height * width` mask bytes (0 or 1).
 *
 * # Safety
 * `map` must be live; `mask` must point to `len` writable bytes.
 */
AsgStatus asg_otsu(const AsgProbMap *map, double *threshold, uint8_t *mask, size_t len);

/**
 * IoU and Dice of two binary masks of `len` bytes (any non-zero byte is foreground).
 *
 * # Safety
 * Both masks must point to `len` bytes; `iou` and `dice` must be writable.
 */
AsgStatus asg_iou_dice(const uint8_t *predicted,
                       const uint8_t *truth,
                       size_t len,
                       double *iou,
                       double *dice);

/**
 * Loads a checkpoint written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
 */
AsgStatus asg_model_load(const char *path, AsgModel **out);

/**
 * # Safety
 * `model` must be null or a live handle.
 */
void asg_model_free(AsgModel *model);

/**
 * Foreground probability map of an interleaved 8-bit RGB frame.
 *
 * # Safety
 * `model` must be live, `rgb` must point to `height * width * 3` bytes and
 * `out` must be writable.
 */
AsgStatus asg_model_predict(const AsgModel *model,
                            size_t height,
                            size_t width,
                            const uint8_t *rgb,
                            AsgProbMap **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ANCHORSEG_H */
