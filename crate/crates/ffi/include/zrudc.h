#ifndef ZRUDC_H
#define ZRUDC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZrudcStatus {
  ZRUDC_STATUS_OK = 0,
  ZRUDC_STATUS_NULL_POINTER = 1,
  ZRUDC_STATUS_INVALID_ARGUMENT = 2,
  ZRUDC_STATUS_NOT_FOUND = 3,
  ZRUDC_STATUS_IO = 4,
  ZRUDC_STATUS_DECODE = 5,
  ZRUDC_STATUS_CHECKPOINT = 6,
  ZRUDC_STATUS_COMPUTE = 7,
  ZRUDC_STATUS_PANIC = 8,
} ZrudcStatus;

/**
 * RGB image with values in `[0, 1]`.
 */
typedef struct ZrudcImage ZrudcImage;

/**
 * Network parameters loaded from a checkpoint.
 */
typedef struct ZrudcParams ZrudcParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from the same thread.
 */
const char *zrudc_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *zrudc_version(void);

/**
 * Load a checkpoint file.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ZrudcStatus zrudc_params_load(const char *path, struct ZrudcParams **out);

/**
 * Parameters of the default network whose output equals its input.
 *
 * # Safety
 * `out` must be writable.
 */
enum ZrudcStatus zrudc_params_identity(struct ZrudcParams **out);

/**
 * # Safety
 * `params` must be null or a handle not yet freed.
 */
void zrudc_params_free(struct ZrudcParams *params);

/**
 * Load an 8-bit RGB PNG or binary PPM.
 *
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum ZrudcStatus zrudc_image_load(const char *path, struct ZrudcImage **out);

/**
 * Wrap interleaved 8-bit RGB pixels (`width * height * 3` bytes).
 *
 * # Safety
 * `data` must point to `len` readable bytes; `out` must be writable.
 */
enum ZrudcStatus zrudc_image_from_rgb8(size_t width,
                                       size_t height,
                                       const uint8_t *data,
                                       size_t len,
                                       struct ZrudcImage **out);

/**
 * # Safety
 * `image` must be a live handle or null (returns 0).
 */
size_t zrudc_image_width(const struct ZrudcImage *image);

/**
 * # Safety
 * `image` must be a live handle or null (returns 0).
 */
size_t zrudc_image_height(const struct ZrudcImage *image);

/**
 * Copy the image out as interleaved 8-bit RGB. `len` must be at least
 * `width * height * 3`.
 *
 * # Safety
 * `buf` must point to `len` writable bytes.
 */
enum ZrudcStatus zrudc_image_copy_rgb8(const struct ZrudcImage *image, uint8_t *buf, size_t len);

/**
 * Write the image as an 8-bit RGB PNG.
 *
 * # Safety
 * `image` must be live; `path` NUL-terminated.
 */
enum ZrudcStatus zrudc_image_save(const struct ZrudcImage *image, const char *path);

/**
 * # Safety
 * `image` must be null or a handle not yet freed.
 */
void zrudc_image_free(struct ZrudcImage *image);

/**
 * Enhance `image`. `pool_kernel` 0 disables the rank-reducing pool.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum ZrudcStatus zrudc_enhance(const struct ZrudcParams *params,
                               const struct ZrudcImage *image,
                               uint32_t pool_kernel,
                               struct ZrudcImage **out);

/**
 * Dark-channel dehazing plus gamma correction with default settings apart
 * from `window` and `gamma`.
 *
 * # Safety
 * `image` must be live; `out` writable.
 */
enum ZrudcStatus zrudc_baseline(const struct ZrudcImage *image,
                                uint32_t window,
                                float gamma,
                                struct ZrudcImage **out);

/**
 * PSNR in dB (99 for identical images).
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum ZrudcStatus zrudc_psnr(const struct ZrudcImage *a, const struct ZrudcImage *b, double *out);

/**
 * Mean SSIM over 11×11 Gaussian windows.
 *
 * # Safety
 * Handles must be live; `out` writable.
 */
enum ZrudcStatus zrudc_ssim(const struct ZrudcImage *a, const struct ZrudcImage *b, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZRUDC_H */
