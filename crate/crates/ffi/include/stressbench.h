#ifndef STRESSBENCH_H
#define STRESSBENCH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SbStatus {
  SB_STATUS_OK = 0,
  SB_STATUS_NULL_POINTER = 1,
  SB_STATUS_INVALID_ARGUMENT = 2,
  /**
   * k or c outside 0..=n.
   */
  SB_STATUS_OUT_OF_RANGE = 3,
  /**
   * Undefined result, e.g. a constant series.
   */
  SB_STATUS_DOMAIN = 4,
  SB_STATUS_IO = 5,
  SB_STATUS_PARSE = 6,
  SB_STATUS_PANIC = 7,
} SbStatus;

/**
 * Loaded benchmark; opaque to C.
 */
typedef struct SbBenchmark SbBenchmark;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message on this thread, or null if none.
 */
const char *sb_last_error(void);

/**
 * Library version, static storage.
 */
const char *sb_version(void);

/**
 * Probability that at least one of `k` draws from `n` samples (with `c` correct) is correct.
 */
enum SbStatus sb_pass_at_k(uint64_t n, uint64_t c, uint64_t k, double *out);

/**
 * As [`sb_pass_at_k`] over samples that are correct and faster than the reference.
 */
enum SbStatus sb_efficient_at_k(uint64_t n, uint64_t c_f, uint64_t k, double *out);

enum SbStatus sb_speedup(double reference_ic, double candidate_ic, double *out);

/**
 * Population relative standard deviation, in percent.
 *
 * # Safety
 * `samples` must point to `len` doubles.
 */
enum SbStatus sb_rsd(const double *samples, size_t len, double *out);

/**
 * # Safety
 * `xs` and `ys` must each point to `len` doubles.
 */
enum SbStatus sb_pearson(const double *xs, const double *ys, size_t len, double *out);

/**
 * Mean after dropping one minimum and one maximum; needs at least 3 samples.
 *
 * # Safety
 * `samples` must point to `len` doubles.
 */
enum SbStatus sb_trimmed_mean(const double *samples, size_t len, double *out);

/**
 * Loads a problem file. Free the handle with [`sb_benchmark_free`].
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a writable handle slot.
 */
enum SbStatus sb_benchmark_load(const char *path, struct SbBenchmark **out);

/**
 * Number of problems; 0 for a null handle.
 *
 * # Safety
 * `bench` must be null or a live handle.
 */
size_t sb_benchmark_len(const struct SbBenchmark *bench);

/**
 * Problem id at `index`; the string lives as long as the handle.
 *
 * # Safety
 * `bench` must be a live handle; `out` writable.
 */
enum SbStatus sb_benchmark_problem_id(const struct SbBenchmark *bench,
                                      size_t index,
                                      const char **out);

/**
 * Number of stressful cases of the problem at `index`.
 *
 * # Safety
 * `bench` must be a live handle; `out` writable.
 */
enum SbStatus sb_benchmark_stressful_count(const struct SbBenchmark *bench,
                                           size_t index,
                                           size_t *out);

/**
 * Releases a handle; null is ignored.
 *
 * # Safety
 * `bench` must be null or a handle from [`sb_benchmark_load`] not yet freed.
 */
void sb_benchmark_free(struct SbBenchmark *bench);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* STRESSBENCH_H */
