#ifndef PIVOTSIM_H
#define PIVOTSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PivotsimStatus {
  PIVOTSIM_STATUS_OK = 0,
  PIVOTSIM_STATUS_NULL_POINTER = 1,
  PIVOTSIM_STATUS_INVALID_INPUT = 2,
  PIVOTSIM_STATUS_PARSE = 3,
  PIVOTSIM_STATUS_RESOURCE = 4,
  PIVOTSIM_STATUS_CONSISTENCY = 5,
  PIVOTSIM_STATUS_IO = 6,
  PIVOTSIM_STATUS_BUFFER_SIZE = 7,
  PIVOTSIM_STATUS_PANIC = 8,
} PivotsimStatus;

typedef enum PivotsimMethod {
  PIVOTSIM_METHOD_CARLEMAN = 0,
  PIVOTSIM_METHOD_PS = 1,
  PIVOTSIM_METHOD_PSC = 2,
} PivotsimMethod;

/**
 * A polynomial vector field with its default initial state.
 */
typedef struct PivotsimModel PivotsimModel;

/**
 * A lifted linear system built from a model.
 */
typedef struct PivotsimSystem PivotsimSystem;

/**
 * A recorded trajectory.
 */
typedef struct PivotsimTrajectory PivotsimTrajectory;

/**
 * Integration settings; obtain defaults from [`pivotsim_sim_config_default`].
 */
typedef struct PivotsimSimConfig {
  double dt;
  double t_end;
  double divergence_threshold;
  double readout_noise;
  uint64_t rng_seed;
  size_t output_stride;
  bool keep_higher_blocks;
} PivotsimSimConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated, truncated to
 * `len`) and returns the full message length excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pivotsim_last_error_message(char *buf, size_t len);

struct PivotsimSimConfig pivotsim_sim_config_default(void);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum PivotsimStatus pivotsim_model_logistic(struct PivotsimModel **out);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum PivotsimStatus pivotsim_model_kpp(size_t n, struct PivotsimModel **out);

/**
 * # Safety
 * `out` must be a valid pointer to a handle slot.
 */
enum PivotsimStatus pivotsim_model_phase_field(size_t n, double beta, struct PivotsimModel **out);

/**
 * Parses a JSON model file. The model has no default initial state.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer to a handle slot.
 */
enum PivotsimStatus pivotsim_model_from_json(const char *json, struct PivotsimModel **out);

/**
 * State dimension `n`, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t pivotsim_model_dim(const struct PivotsimModel *model);

/**
 * Divergence threshold suited to the model.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
double pivotsim_model_divergence_bound(const struct PivotsimModel *model);

/**
 * Copies the default initial state (`n` values). Fails for models without one.
 *
 * # Safety
 * `model` must be a live handle; `out` must point to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_model_default_x0(const struct PivotsimModel *model,
                                              double *out,
                                              size_t out_len);

/**
 * Evaluates `f(x)`.
 *
 * # Safety
 * `x` must point to `x_len` values and `out` to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_model_eval_rhs(const struct PivotsimModel *model,
                                            const double *x,
                                            size_t x_len,
                                            double *out,
                                            size_t out_len);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void pivotsim_model_free(struct PivotsimModel *model);

/**
 * Builds the lifted system of `model` at `pivot` (null means the origin).
 *
 * # Safety
 * `pivot` must be null or point to `pivot_len` values; `out` a valid pointer to a handle slot.
 */
enum PivotsimStatus pivotsim_system_build(const struct PivotsimModel *model,
                                          enum PivotsimMethod method,
                                          size_t order,
                                          const double *pivot,
                                          size_t pivot_len,
                                          struct PivotsimSystem **out);

/**
 * Lifted dimension, or 0 for a null handle.
 *
 * # Safety
 * `sys` must be null or a live handle.
 */
size_t pivotsim_system_dim(const struct PivotsimSystem *sys);

/**
 * Matrix-free product `A y`.
 *
 * # Safety
 * `y` must point to `y_len` values and `out` to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_system_apply(const struct PivotsimSystem *sys,
                                          const double *y,
                                          size_t y_len,
                                          double *out,
                                          size_t out_len);

/**
 * Embeds `x` as the lifted state of `sys`.
 *
 * # Safety
 * `x` must point to `x_len` values and `out` to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_system_lift(const struct PivotsimSystem *sys,
                                         const double *x,
                                         size_t x_len,
                                         double *out,
                                         size_t out_len);

/**
 * # Safety
 * `sys` must be null or a handle not yet freed.
 */
void pivotsim_system_free(struct PivotsimSystem *sys);

/**
 * Integrates the lifted system with pivot switching.
 *
 * `x0` null selects the model's default initial state. `pivot` null selects `x0` (the origin for
 * Carleman). `policy` is `never`, `at:t1,t2`, `every:T` or `drift:E`; `schedule` is
 * `t=target[;t=target...]`; at most one of them may be non-null and both null means no
 * switching. `cfg` null selects the defaults with the model's divergence bound. A run that
 * diverges still succeeds; query [`pivotsim_trajectory_divergence`].
 *
 * # Safety
 * Pointers must be null or valid for the given lengths; strings NUL-terminated.
 */
enum PivotsimStatus pivotsim_run(const struct PivotsimModel *model,
                                 enum PivotsimMethod method,
                                 size_t order,
                                 const double *x0,
                                 size_t x0_len,
                                 const double *pivot,
                                 size_t pivot_len,
                                 const char *policy,
                                 const char *schedule,
                                 const struct PivotsimSimConfig *cfg,
                                 struct PivotsimTrajectory **out);

/**
 * Direct Euler (`rk4 = false`) or fourth-order Runge-Kutta solve of the nonlinear model.
 *
 * # Safety
 * Pointers must be null or valid for the given lengths.
 */
enum PivotsimStatus pivotsim_reference_solve(const struct PivotsimModel *model,
                                             const double *x0,
                                             size_t x0_len,
                                             const struct PivotsimSimConfig *cfg,
                                             bool rk4,
                                             struct PivotsimTrajectory **out);

/**
 * Number of recorded samples, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t pivotsim_trajectory_len(const struct PivotsimTrajectory *traj);

/**
 * State dimension of each sample, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t pivotsim_trajectory_dim(const struct PivotsimTrajectory *traj);

/**
 * Copies all sample times.
 *
 * # Safety
 * `out` must point to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_trajectory_times(const struct PivotsimTrajectory *traj,
                                              double *out,
                                              size_t out_len);

/**
 * Copies sample `index`.
 *
 * # Safety
 * `out` must point to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_trajectory_state(const struct PivotsimTrajectory *traj,
                                              size_t index,
                                              double *out,
                                              size_t out_len);

/**
 * Returns whether the run diverged, storing the divergence time in `t` when it did.
 *
 * # Safety
 * `traj` must be null or a live handle; `t` null or writable.
 */
bool pivotsim_trajectory_divergence(const struct PivotsimTrajectory *traj, double *t);

/**
 * Number of pivot switches, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live handle.
 */
size_t pivotsim_trajectory_switch_count(const struct PivotsimTrajectory *traj);

/**
 * Copies the switch times.
 *
 * # Safety
 * `out` must point to `out_len` writable values.
 */
enum PivotsimStatus pivotsim_trajectory_switch_times(const struct PivotsimTrajectory *traj,
                                                     double *out,
                                                     size_t out_len);

/**
 * Writes the trajectory CSV to `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string.
 */
enum PivotsimStatus pivotsim_trajectory_write_csv(const struct PivotsimTrajectory *traj,
                                                  const char *path);

/**
 * Max-norm error over time, RMS error and time of the maximum between two trajectories.
 *
 * # Safety
 * Handles must be live; output pointers writable or null.
 */
enum PivotsimStatus pivotsim_compare(const struct PivotsimTrajectory *a,
                                     const struct PivotsimTrajectory *b,
                                     double *max_abs,
                                     double *rms,
                                     double *t_at_max);

/**
 * # Safety
 * `traj` must be null or a handle not yet freed.
 */
void pivotsim_trajectory_free(struct PivotsimTrajectory *traj);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PIVOTSIM_H */
