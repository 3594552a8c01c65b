#ifndef PGT_H
#define PGT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum PgtStatus {
  PGT_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  PGT_STATUS_NULL_POINTER = 1,
  /**
   * An argument is out of range or not valid UTF-8.
   */
  PGT_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed input data or a violated precondition in the library.
   */
  PGT_STATUS_DATA = 3,
  /**
   * A file could not be read or written.
   */
  PGT_STATUS_IO = 4,
  /**
   * The library panicked; the handles passed in are still valid.
   */
  PGT_STATUS_INTERNAL = 5,
} PgtStatus;

/**
 * Task identifiers accepted wherever a `uint32_t task` is taken.
 */
enum PgtTask
#ifdef __cplusplus
  : uint32_t
#endif // __cplusplus
 {
  PGT_TASK_COLLECT = 0,
  PGT_TASK_CRAFT = 1,
  PGT_TASK_EXPLORE = 2,
  PGT_TASK_HUNT = 3,
  PGT_TASK_PLACE = 4,
};
#ifndef __cplusplus
typedef uint32_t PgtTask;
#endif // __cplusplus

/**
 * Frozen policy bundle.
 */
typedef struct PgtBundle PgtBundle;

/**
 * Goal latent vector.
 */
typedef struct PgtLatent PgtLatent;

/**
 * Knobs of one tuning round. Obtain defaults from [`pgt_tune_params_default`].
 */
typedef struct PgtTuneParams {
  double beta;
  double lr;
  size_t epochs;
  size_t collect_n;
  size_t k_pos;
  size_t k_neg;
  uint64_t seed;
  size_t workers;
} PgtTuneParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *pgt_last_error(void);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PgtStatus pgt_bundle_load(const char *path, struct PgtBundle **out);

/**
 * # Safety
 * `bundle` must be null or a handle from [`pgt_bundle_load`] not yet freed.
 */
void pgt_bundle_free(struct PgtBundle *bundle);

/**
 * Latent dimension of the bundle; 0 for a null handle.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
size_t pgt_bundle_latent_dim(const struct PgtBundle *bundle);

/**
 * Encode one scripted-expert demonstration of `task` as a goal latent.
 *
 * # Safety
 * `bundle` must be a live handle and `out` a writable pointer.
 */
enum PgtStatus pgt_latent_from_prompt(const struct PgtBundle *bundle,
                                      uint32_t task,
                                      double noise,
                                      uint64_t seed,
                                      struct PgtLatent **out);

/**
 * Copy `len` reals into a new latent.
 *
 * # Safety
 * `values` must point to `len` readable doubles and `out` be writable.
 */
enum PgtStatus pgt_latent_new(const double *values, size_t len, struct PgtLatent **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
enum PgtStatus pgt_latent_load(const char *path, struct PgtLatent **out);

/**
 * Write the latent file format read by the CLI, with empty provenance.
 *
 * # Safety
 * `latent` must be a live handle and `path` a NUL-terminated string.
 */
enum PgtStatus pgt_latent_save(const struct PgtLatent *latent, const char *path);

/**
 * Dimension of the latent; 0 for a null handle.
 *
 * # Safety
 * `latent` must be null or a live handle.
 */
size_t pgt_latent_dim(const struct PgtLatent *latent);

/**
 * Copy the entries into `buf`, which must hold exactly the latent dimension.
 *
 * # Safety
 * `latent` must be a live handle and `buf` point to `len` writable doubles.
 */
enum PgtStatus pgt_latent_values(const struct PgtLatent *latent, double *buf, size_t len);

/**
 * # Safety
 * `latent` must be null or a handle from this library not yet freed.
 */
void pgt_latent_free(struct PgtLatent *latent);

struct PgtTuneParams pgt_tune_params_default(void);

/**
 * One preference-tuning round: collect under `g0`, pair the best against
 * the worst episodes by reward, and tune the latent. Deterministic in
 * `params.seed`.
 *
 * # Safety
 * `bundle` and `g0` must be live handles, `params` readable, `out`
 * writable; `final_loss` may be null.
 */
enum PgtStatus pgt_tune_round(const struct PgtBundle *bundle,
                              const struct PgtLatent *g0,
                              uint32_t task,
                              const struct PgtTuneParams *params,
                              struct PgtLatent **out,
                              double *final_loss);

/**
 * Mean task metric of `n` in-distribution episodes and its standard error.
 *
 * # Safety
 * `bundle` and `latent` must be live handles; `value` and `stderr_out`
 * must be writable.
 */
enum PgtStatus pgt_evaluate(const struct PgtBundle *bundle,
                            const struct PgtLatent *latent,
                            uint32_t task,
                            size_t n,
                            uint64_t seed,
                            double *value,
                            double *stderr_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PGT_H */
