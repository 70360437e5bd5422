#ifndef PFLASH_H
#define PFLASH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PflashStatus {
  PFLASH_STATUS_OK = 0,
  PFLASH_STATUS_NULL_POINTER = 1,
  PFLASH_STATUS_INVALID_ARGUMENT = 2,
  PFLASH_STATUS_SHAPE = 3,
  PFLASH_STATUS_NON_FINITE = 4,
  PFLASH_STATUS_DEGENERATE = 5,
  PFLASH_STATUS_DIVERGED = 6,
  PFLASH_STATUS_IO = 7,
  PFLASH_STATUS_FORMAT = 8,
  PFLASH_STATUS_PANIC = 9,
} PflashStatus;

/**
 * Which flash a capture is rendered or reconstructed for.
 */
typedef enum PflashFlash {
  PFLASH_FLASH_PATTERNED = 0,
  PFLASH_FLASH_UNIFORM = 1,
} PflashFlash;

/**
 * Opaque H x W x C image of doubles.
 */
typedef struct PflashImage PflashImage;

/**
 * Opaque dot pattern.
 */
typedef struct PflashPattern PflashPattern;

/**
 * Camera/projector geometry.
 */
typedef struct PflashRig {
  double baseline;
  double focal_px;
  double ref_distance;
  /**
   * +1 or -1.
   */
  double disparity_sign;
} PflashRig;

/**
 * Sensor noise; all zero gives a clean render.
 */
typedef struct PflashNoise {
  double sigma_r;
  double sigma_s;
  double sigma_row;
} PflashNoise;

/**
 * The commonly tuned reconstruction settings. Start from
 * `pflash_recon_options_default` and change what you need.
 */
typedef struct PflashReconOptions {
  size_t block_size;
  double search_range;
  double search_center;
  double tv_weight;
  size_t max_iters;
  size_t outer_rounds;
  /**
   * Non-zero: fit the expected clamped response under `noise`.
   */
  int32_t clamp_aware;
} PflashReconOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *pflash_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pflash_version(void);

/**
 * Copies `height*width*channels` row-major, channel-interleaved doubles
 * from `data` into a new image.
 *
 * # Safety
 * `data` must point to that many readable doubles; `out` must be writable.
 */
enum PflashStatus pflash_image_new(size_t height,
                                   size_t width,
                                   size_t channels,
                                   const double *data,
                                   struct PflashImage **out_image);

/**
 * # Safety
 * `image` must be null or a handle from this library, freed at most once.
 */
void pflash_image_free(struct PflashImage *image);

/**
 * # Safety
 * `image` must be a live handle; the out pointers must be writable.
 */
enum PflashStatus pflash_image_shape(const struct PflashImage *image,
                                     size_t *height,
                                     size_t *width,
                                     size_t *channels);

/**
 * Copies the pixels into `buf`, which must hold `len` doubles; `len`
 * must equal height*width*channels.
 *
 * # Safety
 * `image` must be a live handle and `buf` must hold `len` doubles.
 */
enum PflashStatus pflash_image_read(const struct PflashImage *image, double *buf, size_t len);

/**
 * PSNR of `estimate` against `reference` in dB.
 *
 * # Safety
 * Both handles must be live; `out_db` must be writable.
 */
enum PflashStatus pflash_psnr(const struct PflashImage *estimate,
                              const struct PflashImage *reference,
                              double peak,
                              double *out_db);

/**
 * Regular dot lattice with pitch `period`.
 *
 * # Safety
 * `out_pattern` must be writable.
 */
enum PflashStatus pflash_pattern_regular(size_t height,
                                         size_t width,
                                         size_t period,
                                         double dot_sigma,
                                         double peak,
                                         double floor_level,
                                         struct PflashPattern **out_pattern);

/**
 * Copy of `base` with every dot displaced by up to a pixel.
 *
 * # Safety
 * `base` must be a live handle; `out_pattern` must be writable.
 */
enum PflashStatus pflash_pattern_jittered(const struct PflashPattern *base,
                                          uint64_t seed,
                                          struct PflashPattern **out_pattern);

/**
 * # Safety
 * `pattern` must be null or a handle from this library, freed at most once.
 */
void pflash_pattern_free(struct PflashPattern *pattern);

/**
 * Mean pattern intensity.
 *
 * # Safety
 * `pattern` must be a live handle; `out_value` must be writable.
 */
enum PflashStatus pflash_pattern_occupancy(const struct PflashPattern *pattern, double *out_value);

/**
 * The pattern as a new single-channel image.
 *
 * # Safety
 * `pattern` must be a live handle; `out_image` must be writable.
 */
enum PflashStatus pflash_pattern_image(const struct PflashPattern *pattern,
                                       struct PflashImage **out_image);

/**
 * Pattern shift in pixels for a point at `depth`.
 *
 * # Safety
 * `rig` must be readable; `out_px` must be writable.
 */
enum PflashStatus pflash_disparity(const struct PflashRig *rig, double depth, double *out_px);

/**
 * Upper bound on the PF/UF input-SNR ratio for a pattern with the given
 * occupancy (linear, not dB).
 *
 * # Safety
 * `out_ratio` must be writable.
 */
enum PflashStatus pflash_theoretical_gain(double occupancy, double *out_ratio);

/**
 * Closed-form SNRs of one UF pixel, a PF dot pixel and an M x M binned UF
 * patch, written to `out3` in that order.
 *
 * # Safety
 * `out3` must hold three doubles.
 */
enum PflashStatus pflash_snr_closed_form(double s, double sigma_r, size_t m, double *out3);

/**
 * Noisy capture of a scene planar at `distance`.
 *
 * # Safety
 * Handles and structs must be live and readable; `out_capture` writable.
 */
enum PflashStatus pflash_render(const struct PflashImage *scene,
                                const struct PflashPattern *pattern,
                                const struct PflashRig *rig,
                                const struct PflashNoise *noise,
                                double distance,
                                enum PflashFlash flash,
                                uint64_t seed,
                                struct PflashImage **out_capture);

struct PflashReconOptions pflash_recon_options_default(void);

/**
 * Recovers the albedo of a capture. For `Patterned`, `out_disparity`
 * (optional, may be null) receives the disparity map as a one-channel
 * image. `rig` (optional) with `near <= far` centres the disparity
 * search on that depth range; `noise` (optional) enables noise-aware
 * fitting.
 *
 * # Safety
 * Non-optional handles must be live; out pointers writable when non-null.
 */
enum PflashStatus pflash_reconstruct(const struct PflashImage *capture,
                                     const struct PflashPattern *pattern,
                                     enum PflashFlash flash,
                                     double distance,
                                     const struct PflashReconOptions *options,
                                     const struct PflashRig *rig,
                                     double near,
                                     double far,
                                     const struct PflashNoise *noise,
                                     struct PflashImage **out_image,
                                     struct PflashImage **out_disparity);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PFLASH_H */
