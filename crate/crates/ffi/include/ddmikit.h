#ifndef DDMIKIT_H
#define DDMIKIT_H

/* Generated by cbindgen; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum DdmikitStatus {
  DdmikitStatus_Ok = 0,
  DdmikitStatus_UsageError = 1,
  DdmikitStatus_DataError = 2,
  DdmikitStatus_NumericalError = 3,
  DdmikitStatus_Panic = 4,
} DdmikitStatus;

/**
 * Opaque pipeline handle (a loaded checkpoint plus its networks).
 */
typedef struct DdmikitPipeline DdmikitPipeline;

/**
 * Basic geometry of a loaded pipeline.
 */
typedef struct DdmikitInfo {
  uint32_t base_resolution;
  uint32_t latent_channels;
  uint32_t num_classes;
  /**
   * 1 when the checkpoint models occupancy (tri-plane), else 0.
   */
  uint8_t is_occupancy;
  /**
   * 1 when a trained denoiser is present (sampling available).
   */
  uint8_t has_denoiser;
} DdmikitInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version of the library, as a static NUL-terminated string.
 */
const char *ddmikit_version(void);

/**
 * Copy the last error message of this thread into `buf` (truncated,
 * always NUL-terminated). Returns the full message length.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be NULL (then only the
 * length is returned).
 */
uintptr_t ddmikit_last_error(char *buf, uintptr_t len);

/**
 * Load a checkpoint file into a new pipeline handle.
 *
 * On success writes the handle into `out` and returns `Ok`; the caller
 * must release it with [`ddmikit_pipeline_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
 * pointer to a handle slot.
 */
enum DdmikitStatus ddmikit_pipeline_load(const char *path, struct DdmikitPipeline **out);

/**
 * Release a handle returned by [`ddmikit_pipeline_load`].
 *
 * # Safety
 * `pipeline` must be a handle from [`ddmikit_pipeline_load`] not yet
 * freed; NULL is ignored.
 */
void ddmikit_pipeline_free(struct DdmikitPipeline *pipeline);

/**
 * Query the geometry of a loaded pipeline.
 *
 * # Safety
 * `pipeline` must be a live handle; `info` must point to a writable
 * `DdmikitInfo`.
 */
enum DdmikitStatus ddmikit_pipeline_info(const struct DdmikitPipeline *pipeline,
                                         struct DdmikitInfo *info);

/**
 * Sample one image and write it as 8-bit RGB, row-major, into `buffer`
 * (`3 * resolution * resolution` bytes).
 *
 * `class_id < 0` samples unconditionally; otherwise classifier-free
 * guidance with weight `guidance` is applied.
 *
 * # Safety
 * `pipeline` must be a live handle and `buffer` must point to
 * `buffer_len` writable bytes.
 */
enum DdmikitStatus ddmikit_generate_image(const struct DdmikitPipeline *pipeline,
                                          uint32_t resolution,
                                          uint64_t seed,
                                          int32_t class_id,
                                          double guidance,
                                          uint8_t *buffer,
                                          uintptr_t buffer_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDMIKIT_H */
