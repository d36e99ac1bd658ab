#ifndef VBWMM_H
#define VBWMM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  VBWMM_STATUS_OK = 0,
  VBWMM_STATUS_NULL_POINTER = 1,
  VBWMM_STATUS_INVALID_ARGUMENT = 2,
  VBWMM_STATUS_CONFIG = 3,
  VBWMM_STATUS_IO = 4,
  VBWMM_STATUS_FORMAT = 5,
  VBWMM_STATUS_NUMERIC = 6,
  VBWMM_STATUS_PANIC = 7,
} VbwmmStatus;

/**
 * Opaque fit result.
 */
typedef struct VbwmmFit VbwmmFit;

/**
 * Opaque covariance image.
 */
typedef struct VbwmmImage VbwmmImage;

/**
 * Fit options. Start from [`vbwmm_options_default`].
 */
typedef struct {
  double alpha0;
  double beta0;
  double b0;
  double c0;
  /**
   * Look count for the initial IGG shape; `<= 0` estimates it.
   */
  double nominal_looks;
  uint32_t k_init;
  /**
   * Odd patch side, or 0 for no spatial terms.
   */
  uint32_t win;
  double tol;
  uint32_t max_iter;
  /**
   * Minimum cluster mass; `<= 0` uses the default.
   */
  double prune_threshold;
  /**
   * Evaluate Bessel ratios numerically instead of in closed form.
   */
  bool numeric_bessel;
  uint64_t seed;
} VbwmmOptions;

/**
 * IGG moments of the look number.
 */
typedef struct {
  double e_l;
  double e_ln_l;
  double e_inv_l;
  double e_inv_l2;
} VbwmmMoments;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library defaults.
 */
VbwmmOptions vbwmm_options_default(void);

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library on the same thread.
 */
const char *vbwmm_last_error_message(void);

/**
 * Error class name of the last failed call on this thread, or null.
 */
const char *vbwmm_last_error_class(void);

/**
 * Reads a PWC1 dataset file.
 *
 * # Safety
 *
 * `path` must be a NUL-terminated string and `out` valid for writes.
 */
VbwmmStatus vbwmm_image_read(const char *path, VbwmmImage **out);

/**
 * Parses a PWC1 dataset held in memory.
 *
 * # Safety
 *
 * `bytes` must be valid for `len` bytes and `out` valid for writes.
 */
VbwmmStatus vbwmm_image_decode(const uint8_t *bytes, size_t len, VbwmmImage **out);

/**
 * Image width, or 0 for a null handle.
 *
 * # Safety
 *
 * `image` must be null or a live handle.
 */
size_t vbwmm_image_width(const VbwmmImage *image);

/**
 * Image height, or 0 for a null handle.
 *
 * # Safety
 *
 * `image` must be null or a live handle.
 */
size_t vbwmm_image_height(const VbwmmImage *image);

/**
 * Frees an image. Null is ignored.
 *
 * # Safety
 *
 * `image` must be null or a live handle not freed before.
 */
void vbwmm_image_free(VbwmmImage *image);

/**
 * Clusters `image`. `options` may be null for the defaults.
 *
 * # Safety
 *
 * `image` must be a live handle, `options` null or valid, `out` valid for
 * writes.
 */
VbwmmStatus vbwmm_fit(const VbwmmImage *image, const VbwmmOptions *options, VbwmmFit **out);

/**
 * Number of surviving clusters, or 0 for a null handle.
 *
 * # Safety
 *
 * `fit` must be null or a live handle.
 */
size_t vbwmm_fit_effective_k(const VbwmmFit *fit);

/**
 * Iterations run, or 0 for a null handle.
 *
 * # Safety
 *
 * `fit` must be null or a live handle.
 */
size_t vbwmm_fit_iterations(const VbwmmFit *fit);

/**
 * Whether the bound met the tolerance before the iteration cap.
 *
 * # Safety
 *
 * `fit` must be null or a live handle.
 */
bool vbwmm_fit_converged(const VbwmmFit *fit);

/**
 * Last evidence lower bound, or NaN for a null handle.
 *
 * # Safety
 *
 * `fit` must be null or a live handle.
 */
double vbwmm_fit_final_elbo(const VbwmmFit *fit);

/**
 * Copies the row-major label map into `labels`, which must hold
 * `width * height` entries.
 *
 * # Safety
 *
 * `fit` must be a live handle and `labels` valid for `len` writes.
 */
VbwmmStatus vbwmm_fit_labels(const VbwmmFit *fit, uint32_t *labels, size_t len);

/**
 * Equivalent number of looks of cluster `k`.
 *
 * # Safety
 *
 * `fit` must be a live handle and `out` valid for writes.
 */
VbwmmStatus vbwmm_fit_enl(const VbwmmFit *fit, size_t k, double *out);

/**
 * Writes labels, palette, report, bound trace and timing into `dir`.
 *
 * # Safety
 *
 * `fit` must be a live handle and `dir` a NUL-terminated string.
 */
VbwmmStatus vbwmm_fit_write(const VbwmmFit *fit, const char *dir);

/**
 * Wall-clock seconds spent in the fit.
 *
 * # Safety
 *
 * `fit` must be null or a live handle.
 */
double vbwmm_fit_seconds(const VbwmmFit *fit);

/**
 * Frees a fit result. Null is ignored.
 *
 * # Safety
 *
 * `fit` must be null or a live handle not freed before.
 */
void vbwmm_fit_free(VbwmmFit *fit);

/**
 * Moments of the IGG look-number posterior with parameters `a`, `b`, `c`.
 *
 * # Safety
 *
 * `out` must be valid for writes.
 */
VbwmmStatus vbwmm_igg_moments(double a, double b, double c, bool numeric_bessel, VbwmmMoments *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VBWMM_H */
