#ifndef HYBRID_TEM_H
#define HYBRID_TEM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TemStatus {
  TEM_STATUS_OK = 0,
  TEM_STATUS_NULL_POINTER = 1,
  TEM_STATUS_INVALID_UTF8 = 2,
  /**
   * Unparseable or inconsistent configuration.
   */
  TEM_STATUS_CONFIG = 3,
  /**
   * Argument outside its domain, or a step above delta*.
   */
  TEM_STATUS_DOMAIN = 4,
  /**
   * Non-finite path, failed implicit solve, singular system.
   */
  TEM_STATUS_NUMERICAL = 5,
  TEM_STATUS_BUFFER_TOO_SMALL = 6,
  TEM_STATUS_PANIC = 7,
} TemStatus;

/**
 * Opaque model handle.
 */
typedef struct TemModel TemModel;

/**
 * Snapped simulation grid.
 */
typedef struct TemGrid {
  double delta;
  /**
   * Steps per delay, M.
   */
  uint64_t delay_steps;
  /**
   * Steps on [0, T], K.
   */
  uint64_t num_steps;
  double horizon;
  double delta_star;
} TemGrid;

typedef struct TemEstimate {
  double estimate;
  double std_error;
  double ci_low;
  double ci_high;
  uint64_t num_paths;
} TemEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Parses a TOML configuration (same schema as the command-line tool).
 * On success `*out` owns a new handle; release it with `tem_model_free`.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TemStatus tem_model_from_toml(const char *toml, struct TemModel **out);

/**
 * The built-in two-regime example.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TemStatus tem_model_example(struct TemModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is a no-op.
 */
void tem_model_free(struct TemModel *model);

/**
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum TemStatus tem_model_grid(const struct TemModel *model, struct TemGrid *out);

/**
 * Simulates path `path_index` of stream `seed` and writes `X(t_0..t_K)`.
 *
 * `*written` receives `K + 1`. If `len` is smaller nothing is written and
 * `TEM_STATUS_BUFFER_TOO_SMALL` is returned; `values` may then be null.
 *
 * # Safety
 * `values` must point to `len` writable doubles; `written` may be null.
 */
enum TemStatus tem_simulate_path(const struct TemModel *model,
                                 uint64_t seed,
                                 uint64_t path_index,
                                 double *values,
                                 size_t len,
                                 size_t *written);

/**
 * Zero-coupon bond `E[exp(-∫ X dt)]` over `num_paths` paths.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum TemStatus tem_price_bond(const struct TemModel *model,
                              uint64_t num_paths,
                              uint64_t seed,
                              struct TemEstimate *out);

/**
 * Up-and-out call `E[(X(T) - strike)^+ 1{max X < barrier}]`.
 *
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum TemStatus tem_price_barrier(const struct TemModel *model,
                                 double strike,
                                 double barrier,
                                 uint64_t num_paths,
                                 uint64_t seed,
                                 struct TemEstimate *out);

/**
 * `exp(delta Γ)` for a row-major `n × n` generator; writes `n²` values.
 *
 * # Safety
 * `generator` must point to `n²` doubles and `out` to `n²` writable doubles.
 */
enum TemStatus tem_transition_matrix(const double *generator, size_t n, double delta, double *out);

/**
 * Message for the last failure on this thread, or null. Valid until the
 * next call into this library from the same thread.
 */
const char *tem_last_error(void);

/**
 * Echo of the resolved configuration as TOML, copied into `buf`.
 *
 * Returns the byte length without the terminator; if it is `>= len` the text
 * was truncated.
 *
 * # Safety
 * `buf` must point to `len` writable bytes, or be null with `len == 0`.
 */
size_t tem_model_config(const struct TemModel *model, char *buf, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HYBRID_TEM_H */
