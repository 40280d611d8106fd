#ifndef SINOMAP_H
#define SINOMAP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SinomapStatus {
  SINOMAP_STATUS_OK = 0,
  SINOMAP_STATUS_NULL_POINTER = 1,
  SINOMAP_STATUS_INVALID_ARGUMENT = 2,
  SINOMAP_STATUS_SHAPE_MISMATCH = 3,
  SINOMAP_STATUS_IO = 4,
  SINOMAP_STATUS_BAD_FORMAT = 5,
  SINOMAP_STATUS_PANIC = 6,
} SinomapStatus;

/**
 * Opaque network handle.
 */
typedef struct SinomapNetwork SinomapNetwork;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *sinomap_last_error(void);

/**
 * Network whose parameters are all zero (the identity map when `residual`).
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum SinomapStatus sinomap_network_zeros(uint32_t n_layers,
                                         uint32_t channels,
                                         bool residual,
                                         struct SinomapNetwork **out);

/**
 * Freshly initialized network, deterministic in `seed`.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage.
 */
enum SinomapStatus sinomap_network_init(uint32_t n_layers,
                                        uint32_t channels,
                                        bool residual,
                                        uint64_t seed,
                                        struct SinomapNetwork **out);

/**
 * Load a checkpoint written by the `sinomap train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum SinomapStatus sinomap_network_load(const char *path, struct SinomapNetwork **out);

/**
 * # Safety
 * `net` must come from this library and `path` be NUL-terminated.
 */
enum SinomapStatus sinomap_network_save(const struct SinomapNetwork *net, const char *path);

/**
 * # Safety
 * `net` must be null or a handle from this library not yet freed.
 */
void sinomap_network_free(struct SinomapNetwork *net);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `net` must be null or a live handle.
 */
size_t sinomap_network_param_count(const struct SinomapNetwork *net);

/**
 * Enhance one `n_angles × n_detectors` sinogram into `output` (same size).
 * `seconds`, if non-null, receives the inference wall time.
 *
 * # Safety
 * Buffers must hold `n_angles * n_detectors` elements.
 */
enum SinomapStatus sinomap_enhance(const struct SinomapNetwork *net,
                                   const double *input,
                                   size_t n_angles,
                                   size_t n_detectors,
                                   double *output,
                                   double *seconds);

/**
 * # Safety
 * `a` and `b` must hold `rows * cols` elements; `out` must be writable.
 */
enum SinomapStatus sinomap_psnr(const double *a,
                                const double *b,
                                size_t rows,
                                size_t cols,
                                double peak,
                                double *out);

/**
 * # Safety
 * `a` and `b` must hold `rows * cols` elements; `out` must be writable.
 */
enum SinomapStatus sinomap_ssim(const double *a,
                                const double *b,
                                size_t rows,
                                size_t cols,
                                double peak,
                                double *out);

/**
 * One latent-count sweep at fixed `f`. `latent` holds the starting counts
 * and receives the updated ones.
 *
 * # Safety
 * All buffers must hold `rows * cols` elements.
 */
enum SinomapStatus sinomap_update_latent(const double *f,
                                         const double *measured,
                                         uint64_t *latent,
                                         size_t rows,
                                         size_t cols,
                                         double i0,
                                         double sigma);

/**
 * Unsupervised objective at `f`: the data term plus `k`-weighted prior.
 * `grad`, if non-null, receives the gradient with respect to `f`.
 *
 * # Safety
 * All buffers must hold `rows * cols` elements; `loss` must be writable.
 */
enum SinomapStatus sinomap_unsup_loss(const double *f,
                                      const double *measured,
                                      const uint64_t *latent,
                                      size_t rows,
                                      size_t cols,
                                      double i0,
                                      double sigma,
                                      double k,
                                      double eps,
                                      double *loss,
                                      double *grad);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SINOMAP_H */
