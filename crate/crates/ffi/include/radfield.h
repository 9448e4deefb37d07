#ifndef RADFIELD_H
#define RADFIELD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum RfStatus {
  RF_STATUS_OK = 0,
  RF_STATUS_NULL_ARGUMENT = 1,
  RF_STATUS_INVALID_ARGUMENT = 2,
  RF_STATUS_IO = 3,
  RF_STATUS_CHECKPOINT = 4,
  RF_STATUS_RENDER = 5,
  RF_STATUS_OPTIM = 6,
  RF_STATUS_BUFFER_TOO_SMALL = 7,
  RF_STATUS_PANIC = 8,
} RfStatus;

/**
 * Opaque handle to a loaded checkpoint.
 */
typedef struct RfModel RfModel;

/**
 * Orbit camera: azimuth and elevation in radians, distance to the origin.
 */
typedef struct RfPose {
  double phi;
  double theta;
  double rho;
} RfPose;

/**
 * Pinhole camera with the principal point at the image center.
 */
typedef struct RfCamera {
  size_t width;
  size_t height;
  /**
   * Focal length in pixels.
   */
  double focal;
} RfCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failed call on this thread, or an empty
 * string. The pointer stays valid until the next failing call on the
 * same thread.
 */
const char *rf_last_error(void);

/**
 * Loads a checkpoint file into a new handle stored at `out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum RfStatus rf_model_load(const char *path, struct RfModel **out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `model` must come from [`rf_model_load`] and not be used afterwards.
 */
void rf_model_free(struct RfModel *model);

/**
 * Number of training objects in the checkpoint.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum RfStatus rf_model_num_objects(const struct RfModel *model, size_t *out);

/**
 * Length of each shape and texture code.
 *
 * # Safety
 * Pointers must be valid or null.
 */
enum RfStatus rf_model_latent_dim(const struct RfModel *model, size_t *out);

/**
 * Copies the codes of training object `index` into two buffers of
 * length `dim`.
 *
 * # Safety
 * Buffers must hold `dim` doubles.
 */
enum RfStatus rf_model_object_codes(const struct RfModel *model,
                                    size_t index,
                                    double *shape_out,
                                    double *texture_out,
                                    size_t dim);

/**
 * Renders codes from `pose` into `rgb_out` (`len` doubles, at least
 * `width * height * 3`).
 *
 * # Safety
 * Code buffers hold `dim` doubles; `rgb_out` holds `len`.
 */
enum RfStatus rf_render(const struct RfModel *model,
                        const double *shape,
                        const double *texture,
                        size_t dim,
                        struct RfPose pose,
                        struct RfCamera camera,
                        double *rgb_out,
                        size_t len);

/**
 * Fits codes and pose to one image, starting from `init` and the mean
 * training codes, for `iterations` optimizer steps.
 *
 * # Safety
 * `rgb` holds `width * height * 3` doubles; code buffers hold `dim`.
 */
enum RfStatus rf_invert(const struct RfModel *model,
                        const double *rgb,
                        struct RfCamera camera,
                        struct RfPose init,
                        size_t iterations,
                        double *shape_out,
                        double *texture_out,
                        size_t dim,
                        struct RfPose *pose_out,
                        double *final_loss);

/**
 * PSNR in dB between two RGB buffers of the same size; infinite when
 * they are equal.
 *
 * # Safety
 * Both buffers hold `width * height * 3` doubles.
 */
enum RfStatus rf_psnr(const double *a, const double *b, size_t width, size_t height, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RADFIELD_H */
