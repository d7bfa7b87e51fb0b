#ifndef QMAG_H
#define QMAG_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QmagPreset {
  QMAG_PRESET_CASE_I = 0,
  QMAG_PRESET_CASE_II = 1,
} QmagPreset;

typedef enum QmagStatus {
  QMAG_STATUS_OK = 0,
  QMAG_STATUS_NULL_POINTER = 1,
  QMAG_STATUS_INVALID_ARGUMENT = 2,
  QMAG_STATUS_INVALID_CONFIG = 3,
  QMAG_STATUS_INVALID_DATA = 4,
  QMAG_STATUS_PROPAGATION = 5,
  QMAG_STATUS_ZERO_POSTERIOR = 6,
  QMAG_STATUS_LOW_ACCEPTANCE = 7,
  QMAG_STATUS_SPECTRUM = 8,
  QMAG_STATUS_IO = 9,
  QMAG_STATUS_JSON = 10,
  QMAG_STATUS_BUFFER_TOO_SMALL = 11,
  QMAG_STATUS_PANIC = 12,
} QmagStatus;

// A run configuration.
typedef struct QmagConfig QmagConfig;

// A measurement record.
typedef struct QmagDataset QmagDataset;

// Posterior moments from the sampler. `xi_*` are NaN when ξ is fixed.
typedef struct QmagEstimate {
  double omega_tg_hz;
  double omega_tg_sd_hz;
  double xi_hz;
  double xi_sd_hz;
  double acceptance;
  double max_split_r_hat;
} QmagEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next `qmag_*` call on the same thread.
const char *qmag_last_error(void);

// Library version and build identity. Static storage.
const char *qmag_version(void);

// Parses a dataset from JSON text.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum QmagStatus qmag_dataset_from_json(const char *json, struct QmagDataset **out);

// Loads a dataset JSON file.
//
// # Safety
// `path` must be a nul-terminated string; `out` must be writable.
enum QmagStatus qmag_dataset_load(const char *path, struct QmagDataset **out);

// One of the bundled reference records, e.g. `"case-i-nm4"`.
//
// # Safety
// `name` must be a nul-terminated string; `out` must be writable.
enum QmagStatus qmag_dataset_reference(const char *name, struct QmagDataset **out);

// # Safety
// `d` must be null or a handle from this library not yet freed.
void qmag_dataset_free(struct QmagDataset *d);

// Number of time points and shots per point.
//
// # Safety
// `d` must be a live handle; outputs must be writable.
enum QmagStatus qmag_dataset_shape(const struct QmagDataset *d, uintptr_t *n_points, uint32_t *n_m);

// Copies times and dark counts into caller buffers of length `len`, which
// must be at least the number of points.
//
// # Safety
// `times_s` and `counts` must point to `len` writable elements.
enum QmagStatus qmag_dataset_copy(const struct QmagDataset *d,
                                  double *times_s,
                                  uint32_t *counts,
                                  uintptr_t len);

// Writes the dataset as JSON.
//
// # Safety
// `d` must be a live handle and `path` a nul-terminated string.
enum QmagStatus qmag_dataset_save(const struct QmagDataset *d, const char *path);

// A preset configuration.
//
// # Safety
// `out` must be writable.
enum QmagStatus qmag_config_preset(enum QmagPreset preset, struct QmagConfig **out);

// Parses and validates a configuration. Unknown keys are rejected.
//
// # Safety
// `json` must be a nul-terminated string; `out` must be writable.
enum QmagStatus qmag_config_from_json(const char *json, struct QmagConfig **out);

// # Safety
// `c` must be null or a handle from this library not yet freed.
void qmag_config_free(struct QmagConfig *c);

// Overrides the seed.
//
// # Safety
// `c` must be a live handle.
enum QmagStatus qmag_config_set_seed(struct QmagConfig *c, uint64_t seed);

// Simulates a dataset from the configured sensor, signal, plan and noise.
//
// # Safety
// `c` must be a live handle; `out` must be writable.
enum QmagStatus qmag_simulate(const struct QmagConfig *c, struct QmagDataset **out);

// Posterior mean and standard deviation of Ω_tg on the configured
// one-dimensional grid at ξ = 0.
//
// # Safety
// Handles must be live; outputs must be writable.
enum QmagStatus qmag_infer_grid(const struct QmagConfig *c,
                                const struct QmagDataset *d,
                                double *mean_hz,
                                double *sd_hz);

// Runs the configured Metropolis sampler.
//
// # Safety
// Handles must be live; `out` must be writable.
enum QmagStatus qmag_infer_mcmc(const struct QmagConfig *c,
                                const struct QmagDataset *d,
                                struct QmagEstimate *out);

// FFT estimate of Ω_tg and its resolution-limited uncertainty.
//
// # Safety
// `d` must be a live handle; outputs must be writable.
enum QmagStatus qmag_fft_estimate(const struct QmagDataset *d,
                                  double *omega_hz,
                                  double *uncertainty_hz);

// Weighted least-squares fit of the ideal cos² response.
//
// # Safety
// `d` must be a live handle; outputs must be writable.
enum QmagStatus qmag_lsq_cos2(const struct QmagDataset *d,
                              double init_hz,
                              double *omega_hz,
                              double *ci_hz);

// Runs the configured mode as the command-line tool would, writing its
// files into `out_dir`.
//
// # Safety
// `c` must be a live handle and `out_dir` a nul-terminated string.
enum QmagStatus qmag_run(const struct QmagConfig *c, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMAG_H */
