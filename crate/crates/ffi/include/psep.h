#ifndef PSEP_H
#define PSEP_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PsepStatus {
  PSEP_STATUS_OK = 0,
  PSEP_STATUS_NULL_POINTER = 1,
  PSEP_STATUS_INVALID_ARGUMENT = 2,
  PSEP_STATUS_IO = 3,
  PSEP_STATUS_FORMAT = 4,
  PSEP_STATUS_NOT_DIFFERENTIABLE = 5,
  PSEP_STATUS_NUMERICAL = 6,
  PSEP_STATUS_MISSING = 7,
  PSEP_STATUS_PANIC = 8,
  PSEP_STATUS_OTHER = 9,
} PsepStatus;

/**
 * A loaded prior checkpoint.
 */
typedef struct PsepPrior PsepPrior;

/**
 * Sampler settings for [`psep_sgld_separate`].
 */
typedef struct PsepSgldParams {
  double step_size;
  size_t steps;
  /**
   * mixture noise std
   */
  double gamma;
  uint64_t seed;
  /**
   * std of the noise added to the mix to initialize every source
   */
  double init_std;
} PsepSgldParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the calling thread's last error message, NUL terminated and
 * truncated to `len` bytes. Returns the full message length without the
 * terminator; pass a null buffer to query it.
 *
 * # Safety
 * `buf` must be null or valid for `len` bytes.
 */
size_t psep_last_error_message(char *buf, size_t len);

/**
 * Library version, a static NUL-terminated string.
 */
const char *psep_version(void);

/**
 * Load a checkpoint file into a new handle written to `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PsepStatus psep_prior_load(const char *path, struct PsepPrior **out);

/**
 * Release a handle. Null is ignored.
 *
 * # Safety
 * `prior` must be null or a handle from [`psep_prior_load`] not yet freed.
 */
void psep_prior_free(struct PsepPrior *prior);

/**
 * Tags of a prior: family (0 flow, 1 autoregressive), source code
 * (0 sine, 1 sawtooth, 2 square, 3 triangle) and conditioning σ.
 *
 * # Safety
 * `prior` must be a live handle; the outputs valid pointers or null.
 */
enum PsepStatus psep_prior_info(const struct PsepPrior *prior,
                                uint32_t *family,
                                uint32_t *source,
                                double *sigma);

/**
 * Mean log-density per sample of one frame.
 *
 * # Safety
 * `samples` must hold `len` values and `out` be valid.
 */
enum PsepStatus psep_prior_log_density(const struct PsepPrior *prior,
                                       const double *samples,
                                       size_t len,
                                       double *out);

/**
 * Total log-density of a frame and its gradient with respect to every
 * sample. Autoregressive priors return `NotDifferentiable`.
 *
 * # Safety
 * `samples` and `grad` must hold `len` values; `total` must be valid.
 */
enum PsepStatus psep_prior_grad_log_density(const struct PsepPrior *prior,
                                            const double *samples,
                                            size_t len,
                                            double *total,
                                            double *grad);

/**
 * µ-law encode `len` samples into classes `0..=255`; values outside
 * `[-1, 1]` are clamped.
 *
 * # Safety
 * `samples` and `classes` must hold `len` values.
 */
enum PsepStatus psep_mulaw_encode(const double *samples, size_t len, uint16_t *classes);

/**
 * Decode µ-law classes back to amplitudes.
 *
 * # Safety
 * `classes` and `samples` must hold `len` values.
 */
enum PsepStatus psep_mulaw_decode(const uint16_t *classes, size_t len, double *samples);

/**
 * Synthesize `len` samples of a toy waveform; `kind` is a source code as
 * in [`psep_prior_info`].
 *
 * # Safety
 * `out` must hold `len` values.
 */
enum PsepStatus psep_synth_waveform(uint32_t kind,
                                    double frequency,
                                    double amplitude,
                                    double phase,
                                    uint32_t sample_rate,
                                    size_t len,
                                    double *out);

/**
 * Separate a mean mix of `n_priors` sources with SGLD. `sources` and
 * `posterior_mean` receive `n_priors * len` values, source-major.
 *
 * # Safety
 * `mix` must hold `len` values, `priors` `n_priors` live handles, and each
 * output `n_priors * len` values.
 */
enum PsepStatus psep_sgld_separate(const double *mix,
                                   size_t len,
                                   const struct PsepPrior *const *priors,
                                   size_t n_priors,
                                   const struct PsepSgldParams *params,
                                   double *sources,
                                   double *posterior_mean);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PSEP_H */
