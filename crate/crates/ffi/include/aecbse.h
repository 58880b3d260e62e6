#ifndef AECBSE_H
#define AECBSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AecbseAlgorithm {
  AECBSE_ALGORITHM_JOINT = 0,
  AECBSE_ALGORITHM_BNLMS_IVE = 1,
  AECBSE_ALGORITHM_LS_AEC = 2,
  AECBSE_ALGORITHM_IVE_ONLY = 3,
  AECBSE_ALGORITHM_UNPROCESSED = 4,
} AecbseAlgorithm;

typedef enum AecbseStatus {
  AECBSE_STATUS_OK = 0,
  AECBSE_STATUS_NULL_POINTER = 1,
  AECBSE_STATUS_INVALID_ARGUMENT = 2,
  AECBSE_STATUS_SHAPE_MISMATCH = 3,
  AECBSE_STATUS_NUMERICAL = 4,
  AECBSE_STATUS_NO_EXCITATION = 5,
  AECBSE_STATUS_PANIC = 6,
} AecbseStatus;

/**
 * Configured estimator.
 */
typedef struct AecbseProcessor AecbseProcessor;

/**
 * Output of one [`aecbse_process`] call.
 */
typedef struct AecbseResult AecbseResult;

/**
 * Problem size and estimator settings.
 */
typedef struct AecbseConfig {
  size_t mics;
  size_t bins;
  size_t frames;
  size_t iterations;
  enum AecbseAlgorithm algorithm;
  /**
   * Relative diagonal loading; 0 selects the library default.
   */
  double loading;
  /**
   * One-based backprojection channel.
   */
  size_t reference_channel;
} AecbseConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or an empty string.
 * The pointer stays valid until the next call on this thread.
 */
const char *aecbse_last_error(void);

/**
 * Defaults: 4 microphones, 1025 bins, 50 iterations, joint algorithm. `frames` must be set.
 */
struct AecbseConfig aecbse_default_config(void);

/**
 * Creates a processor. `out` receives a handle to free with [`aecbse_processor_free`].
 *
 * # Safety
 * `config` must point to a valid config and `out` to writable storage for one pointer.
 */
enum AecbseStatus aecbse_processor_new(const struct AecbseConfig *config,
                                       struct AecbseProcessor **out);

/**
 * Frees a processor. Null is ignored.
 *
 * # Safety
 * `p` must come from [`aecbse_processor_new`] and not have been freed.
 */
void aecbse_processor_free(struct AecbseProcessor *p);

/**
 * Runs the configured algorithm.
 *
 * `x` holds `2 * bins * frames * mics` doubles, `u` holds `2 * bins * frames`.
 * On success `out` receives a result handle to free with [`aecbse_result_free`].
 *
 * # Safety
 * `p` must be a live processor; `x` and `u` must point to at least `x_len` and `u_len`
 * readable doubles; `out` must be writable.
 */
enum AecbseStatus aecbse_process(const struct AecbseProcessor *p,
                                 const double *x,
                                 size_t x_len,
                                 const double *u,
                                 size_t u_len,
                                 struct AecbseResult **out);

/**
 * Number of doubles in the output spectrum, `2 * bins * frames`.
 *
 * # Safety
 * `r` must be a live result or null.
 */
size_t aecbse_result_output_len(const struct AecbseResult *r);

/**
 * Number of doubles in each filter dump, `2 * bins * mics`.
 *
 * # Safety
 * `r` must be a live result or null.
 */
size_t aecbse_result_filter_len(const struct AecbseResult *r);

/**
 * Iterations actually run.
 *
 * # Safety
 * `r` must be a live result or null.
 */
size_t aecbse_result_iterations(const struct AecbseResult *r);

/**
 * Copies the backprojected output spectrum.
 *
 * # Safety
 * `r` must be a live result; `dst` must hold `len` writable doubles.
 */
enum AecbseStatus aecbse_result_copy_output(const struct AecbseResult *r, double *dst, size_t len);

/**
 * Copies the echo path estimates, bin-major.
 *
 * # Safety
 * `r` must be a live result; `dst` must hold `len` writable doubles.
 */
enum AecbseStatus aecbse_result_copy_echo_path(const struct AecbseResult *r,
                                               double *dst,
                                               size_t len);

/**
 * Copies the extraction beamformers, bin-major.
 *
 * # Safety
 * `r` must be a live result; `dst` must hold `len` writable doubles.
 */
enum AecbseStatus aecbse_result_copy_beamformer(const struct AecbseResult *r,
                                                double *dst,
                                                size_t len);

/**
 * Frees a result. Null is ignored.
 *
 * # Safety
 * `r` must come from [`aecbse_process`] and not have been freed.
 */
void aecbse_result_free(struct AecbseResult *r);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AECBSE_H */
