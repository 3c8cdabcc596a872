#ifndef ELASTOCAL_H
#define ELASTOCAL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum EcStatus {
  EC_STATUS_OK = 0,
  EC_STATUS_NULL_POINTER = 1,
  EC_STATUS_INVALID_ARGUMENT = 2,
  EC_STATUS_INVALID_MODEL = 3,
  EC_STATUS_JOINT_LIMIT = 4,
  EC_STATUS_SINGULAR = 5,
  EC_STATUS_ILL_CONDITIONED = 6,
  EC_STATUS_DEGENERATE_DATA = 7,
  EC_STATUS_PARSE = 8,
  EC_STATUS_IO = 9,
  EC_STATUS_IDENTIFICATION = 10,
  EC_STATUS_PANIC = 99,
} EcStatus;

// Opaque stiffness model: robot, optional compensator, Hessian switch.
typedef struct EcModel EcModel;

// Compensator parameters, SI. `sign` is +1 or -1.
typedef struct EcCompensator {
  double link_length;
  double a_x;
  double a_y;
  int32_t sign;
  double spring_stiffness;
  double free_length;
  double joint_stiffness;
} EcCompensator;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Nominal model of a project file: robot plus its compensator, if the
// project gives complete compensator parameters.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EcStatus ec_model_from_project(const char *path, struct EcModel **out);

// Identified model written by `identify-elastostatics` (`model.toml`).
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum EcStatus ec_model_load(const char *path, struct EcModel **out);

// Built-in heavy 6R model; `compensator` may be NULL.
//
// # Safety
// `compensator` must be NULL or point to a valid struct; `out` must be
// writable.
enum EcStatus ec_model_heavy_6r(const struct EcCompensator *compensator, struct EcModel **out);

// Releases a handle; NULL is ignored.
//
// # Safety
// `model` must come from an `ec_model_*` constructor and not be used again.
void ec_model_free(struct EcModel *model);

// Number of joints, 0 for NULL.
//
// # Safety
// `model` must be NULL or a live handle.
size_t ec_model_joint_count(const struct EcModel *model);

// Includes the load Hessian in subsequent predictions.
//
// # Safety
// `model` must be a live handle.
enum EcStatus ec_model_set_hessian(struct EcModel *model, bool include);

// Rigid tool position (`position[3]`) and rotation (`rotation[9]`).
//
// # Safety
// `q` holds `n` values; outputs hold 3 and 9 values.
enum EcStatus ec_forward_kinematics(const struct EcModel *model,
                                    const double *q,
                                    size_t n,
                                    double *position,
                                    double *rotation);

// Tool deflection under `wrench[6]` (force, torque): `deflection[6]` is
// translation then rotation.
//
// # Safety
// `q` holds `n` values, `wrench` 6, `deflection` 6.
enum EcStatus ec_predict_deflection(const struct EcModel *model,
                                    const double *q,
                                    size_t n,
                                    const double *wrench,
                                    double *deflection);

// 6×6 Cartesian stiffness at `q`, row-major into `stiffness[36]`.
// `wrench` matters only with the Hessian switched on and may be NULL.
//
// # Safety
// `q` holds `n` values, `wrench` NULL or 6, `stiffness` 36.
enum EcStatus ec_cartesian_stiffness(const struct EcModel *model,
                                     const double *q,
                                     size_t n,
                                     const double *wrench,
                                     double *stiffness);

// Equivalent joint-2 stiffness of a compensator at `q2`.
//
// # Safety
// `compensator` points to a valid struct; `stiffness` is writable.
enum EcStatus ec_joint2_stiffness(const struct EcCompensator *compensator,
                                  double q2,
                                  double *stiffness);

// Mirror compensation: joint command `corrected_q[n]` that brings the
// loaded tool onto the rigid target of `q`. `deflection[6]` may be NULL.
// `refine` iterates the correction.
//
// # Safety
// `q` and `corrected_q` hold `n` values, `wrench` 6, `deflection` NULL or 6.
enum EcStatus ec_compensate(const struct EcModel *model,
                            const double *q,
                            size_t n,
                            const double *wrench,
                            bool refine,
                            double *corrected_q,
                            double *deflection);

// Lever length from a marker trace: `q2[count]` angles and `points[3*count]`
// positions (x, y, z per sample).
//
// # Safety
// `q2` holds `count` values, `points` `3 * count`.
enum EcStatus ec_fit_link_length(const double *q2,
                                 const double *points,
                                 size_t count,
                                 double *link_length);

// Message of the last failed call on this thread, or NULL. Valid until the
// next call on the same thread.
const char *ec_last_error_message(void);

// Library version, static storage.
const char *ec_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ELASTOCAL_H */
