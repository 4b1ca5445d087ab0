#ifndef GNSS_INIT_H
#define GNSS_INIT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status code of every fallible call.
typedef enum GnssInitStatus {
  GNSS_INIT_STATUS_OK = 0,
  GNSS_INIT_STATUS_NULL_POINTER = 1,
  GNSS_INIT_STATUS_INVALID_ARGUMENT = 2,
  GNSS_INIT_STATUS_IO = 3,
  GNSS_INIT_STATUS_PARSE = 4,
  // The estimation failed (too few epochs, IMU gap, solver failure).
  GNSS_INIT_STATUS_ESTIMATION = 5,
  // The initial pose was not set before running.
  GNSS_INIT_STATUS_MISSING_INITIAL_POSE = 6,
  GNSS_INIT_STATUS_PANIC = 99,
} GnssInitStatus;

// Outcome of [`gnss_init_session_run`].
typedef struct GnssInitResult GnssInitResult;

// Measurements and settings of one initialization problem.
typedef struct GnssInitSession GnssInitSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread (empty if none). The
// pointer stays valid until the next failing call on the same thread.
const char *gnss_init_last_error(void);

// Library version as a static NUL-terminated string.
const char *gnss_init_version(void);

// Creates an empty session with default settings (threshold 1e-2,
// trigger-based activation).
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum GnssInitStatus gnss_init_session_new(struct GnssInitSession **out);

// Releases a session; null is ignored.
//
// # Safety
// `s` must come from [`gnss_init_session_new`] and not be used afterwards.
void gnss_init_session_free(struct GnssInitSession *s);

// Appends an IMU sample; timestamps must increase strictly.
//
// # Safety
// `s` must be a live session; `gyro` and `accel` must point to 3 doubles.
enum GnssInitStatus gnss_init_session_add_imu(struct GnssInitSession *s,
                                              double timestamp,
                                              const double *gyro,
                                              const double *accel);

// Appends a GNSS fix with isotropic standard deviation `sigma` (m).
//
// # Safety
// `s` must be a live session; `position` must point to 3 doubles.
enum GnssInitStatus gnss_init_session_add_gnss(struct GnssInitSession *s,
                                               double timestamp,
                                               const double *position,
                                               double sigma);

// Replaces the session's measurements with CSV files. `gnss_path` may be
// null, in which case fixes are synthesized from the ground truth with
// `sigma` and `seed`. The initial pose is taken from the ground truth.
// `time_unit` is 0 for integer nanoseconds, 1 for seconds.
//
// # Safety
// `s` must be a live session; paths must be NUL-terminated strings.
enum GnssInitStatus gnss_init_session_load_csv(struct GnssInitSession *s,
                                               const char *imu_path,
                                               const char *groundtruth_path,
                                               const char *gnss_path,
                                               int time_unit,
                                               double sigma,
                                               uint64_t seed);

// Sets the known pose of the first epoch: attitude quaternion `(w, x, y, z)`,
// position and velocity.
//
// # Safety
// `s` must be a live session; `quat` must point to 4 doubles, the others to 3.
enum GnssInitStatus gnss_init_session_set_initial_pose(struct GnssInitSession *s,
                                                       const double *quat,
                                                       const double *position,
                                                       const double *velocity);

// Relative-change threshold of the trigger criterion.
//
// # Safety
// `s` must be a live session.
enum GnssInitStatus gnss_init_session_set_threshold(struct GnssInitSession *s, double threshold);

// Activates the global residuals after `index` epochs; a negative value
// restores trigger-based activation.
//
// # Safety
// `s` must be a live session.
enum GnssInitStatus gnss_init_session_set_activation_index(struct GnssInitSession *s,
                                                           int64_t index);

// Per-sample IMU noise standard deviations assumed by the estimator.
//
// # Safety
// `s` must be a live session.
enum GnssInitStatus gnss_init_session_set_imu_noise(struct GnssInitSession *s,
                                                    double gyro_sigma,
                                                    double accel_sigma);

// Number of IMU samples and GNSS fixes held by the session.
//
// # Safety
// `s` must be a live session; outputs may be null.
enum GnssInitStatus gnss_init_session_counts(const struct GnssInitSession *s,
                                             size_t *imu_count,
                                             size_t *gnss_count);

// Runs the incremental two-stage initialization over all fixes.
//
// # Safety
// `s` must be a live session and `out` valid storage for one handle.
enum GnssInitStatus gnss_init_session_run(const struct GnssInitSession *s,
                                          struct GnssInitResult **out);

// Releases a result; null is ignored.
//
// # Safety
// `r` must come from [`gnss_init_session_run`] and not be used afterwards.
void gnss_init_result_free(struct GnssInitResult *r);

// Epoch at which the trigger fired, or -1 if it never did.
//
// # Safety
// `r` must be a live result; `k_star` writable.
enum GnssInitStatus gnss_init_result_k_star(const struct GnssInitResult *r, int64_t *k_star);

// Epoch at which global residuals became active, or -1.
//
// # Safety
// `r` must be a live result; `epoch` writable.
enum GnssInitStatus gnss_init_result_activation_epoch(const struct GnssInitResult *r,
                                                      int64_t *epoch);

// Number of keyframes in the final window (0 for a null handle).
//
// # Safety
// `r` must be a live result or null.
size_t gnss_init_result_keyframe_count(const struct GnssInitResult *r);

// Copies the final keyframe positions in the GNSS frame as `x, y, z`
// triples; `len` is the buffer length in doubles and must be at least
// `3 * keyframe_count`.
//
// # Safety
// `r` must be a live result; `out` must hold `len` doubles.
enum GnssInitStatus gnss_init_result_positions(const struct GnssInitResult *r,
                                               double *out,
                                               size_t len);

// Gyroscope bias (rad/s) and gravity vector (m/s², body-world frame).
//
// # Safety
// `r` must be a live result; both outputs must hold 3 doubles.
enum GnssInitStatus gnss_init_result_bias_gravity(const struct GnssInitResult *r,
                                                  double *gyro_bias,
                                                  double *gravity);

// Estimated transform from the inertial frame to the GNSS frame:
// quaternion `(w, x, y, z)` and translation.
//
// # Safety
// `r` must be a live result; `quat` must hold 4 doubles, `translation` 3.
enum GnssInitStatus gnss_init_result_extrinsic(const struct GnssInitResult *r,
                                               double *quat,
                                               double *translation);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GNSS_INIT_H */
