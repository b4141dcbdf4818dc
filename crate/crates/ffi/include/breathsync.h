#ifndef BREATHSYNC_H
#define BREATHSYNC_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum bs_status {
  BS_STATUS_OK = 0,
  BS_STATUS_NULL_POINTER = 1,
  BS_STATUS_INVALID_ARGUMENT = 2,
  BS_STATUS_INSUFFICIENT_DATA = 3,
  BS_STATUS_DEGENERATE = 4,
  BS_STATUS_NOT_APPLICABLE = 5,
  BS_STATUS_BUFFER_TOO_SMALL = 6,
  BS_STATUS_FAILED = 7,
  BS_STATUS_PANIC = 8,
} bs_status;

typedef struct bs_depth_normalizer bs_depth_normalizer;

typedef struct bs_engine bs_engine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. Valid until the
 next failing call on the same thread.
 */
const char *bs_last_error(void);

/*
 Fixed tempo envelope at 6 breaths per minute.
 */
enum bs_status bs_engine_new_fixed_tempo(double control_rate_hz, struct bs_engine **handle);

enum bs_status bs_engine_new_personalized_tempo(double baseline_bpm,
                                                double control_rate_hz,
                                                struct bs_engine **handle);

/*
 Gain follows breathing depth fed through `bs_engine_push_breath`.
 */
enum bs_status bs_engine_new_personalized_envelope(double control_rate_hz,
                                                   struct bs_engine **handle);

/*
 # Safety
 `handle` must come from a `bs_engine_new_*` call and not be used afterwards.
 */
void bs_engine_free(struct bs_engine *handle);

/*
 # Safety
 `handle` must be a live engine.
 */
enum bs_status bs_engine_push_breath(struct bs_engine *handle, double t, double value);

/*
 Gain of the current control tick, then advance.

 # Safety
 `handle` must be a live engine and `gain` writable.
 */
enum bs_status bs_engine_tick(struct bs_engine *handle, double *gain);

/*
 # Safety
 `handle` must be a live engine and `phase` writable.
 */
enum bs_status bs_engine_phase(const struct bs_engine *handle, double *phase);

/*
 Tempo of the personalized design for a measured resting rate.

 # Safety
 `rate_bpm` must be writable.
 */
enum bs_status bs_personalized_tempo_bpm(double baseline_bpm, double *rate_bpm);

/*
 Tempo-design gain at cycle phase in [0, 1).

 # Safety
 `gain` must be writable.
 */
enum bs_status bs_envelope_gain(double phase, double *gain);

/*
 # Safety
 `handle` must be writable.
 */
enum bs_status bs_depth_normalizer_new(double window_s,
                                       double epsilon,
                                       struct bs_depth_normalizer **handle);

/*
 # Safety
 `handle` must come from `bs_depth_normalizer_new` and not be used afterwards.
 */
void bs_depth_normalizer_free(struct bs_depth_normalizer *handle);

/*
 # Safety
 `handle` must be live and `depth` writable.
 */
enum bs_status bs_depth_normalizer_push(struct bs_depth_normalizer *handle,
                                        double t,
                                        double value,
                                        double *depth);

/*
 Zero-phase Butterworth low-pass of `n` samples into `y` (length `n`).

 # Safety
 `x` and `y` must hold `n` values.
 */
enum bs_status bs_lowpass_zero_phase(const double *x,
                                     size_t n,
                                     size_t order,
                                     double cutoff_hz,
                                     double fs_hz,
                                     double *y);

/*
 Indices of peaks with at least `min_prominence` on both sides.

 # Safety
 `x` must hold `n` values, `idx` `cap` entries, `count` writable.
 */
enum bs_status bs_prominent_peaks(const double *x,
                                  size_t n,
                                  double min_prominence,
                                  size_t *idx,
                                  size_t cap,
                                  size_t *count);

/*
 R-peak sample indices of a raw ECG sampled at `fs_hz`.

 # Safety
 `x` must hold `n` values, `idx` `cap` entries, `count` writable.
 */
enum bs_status bs_detect_r_peaks(const double *x,
                                 size_t n,
                                 double fs_hz,
                                 size_t *idx,
                                 size_t cap,
                                 size_t *count);

/*
 One-way ANOVA over `k` groups stored back to back in `values`, with
 `sizes[i]` values in group `i`.

 # Safety
 `sizes` must hold `k` entries and `values` their sum.
 */
enum bs_status bs_one_way_anova(const double *values,
                                const size_t *sizes,
                                size_t k,
                                double *f_stat,
                                double *p_value);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BREATHSYNC_H */
