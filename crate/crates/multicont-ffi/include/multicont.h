#ifndef MULTICONT_H
#define MULTICONT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define MC_OK 0

#define MC_ERR_CONFIG 1

#define MC_ERR_SOLVER 2

#define MC_ERR_NULL 4

#define MC_ERR_UTF8 5

#define MC_ERR_RANGE 6

#define MC_ERR_PANIC 7

/**
 * Opaque run configuration.
 */
typedef struct McConfig McConfig;

/**
 * Opaque upscaling result: per-coarse-cell effective coefficients.
 */
typedef struct McUpscale McUpscale;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the last error message of this thread into `buf` (NUL
 * terminated, truncated to `cap`). Returns the full message length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be null.
 */
size_t mc_last_error(char *buf, size_t cap);

/**
 * Library version as a static NUL-terminated string.
 */
const char *mc_version(void);

/**
 * Parses a TOML run configuration and validates it.
 *
 * # Safety
 * `toml` must be a valid NUL-terminated string; `out` must be non-null.
 */
int32_t mc_config_from_toml(const char *toml, struct McConfig **out);

/**
 * Releases a configuration handle. Null is a no-op.
 *
 * # Safety
 * `cfg` must come from `mc_config_from_toml` and not be freed twice.
 */
void mc_config_free(struct McConfig *cfg);

/**
 * Runs the full compare pipeline (fine reference, upscaling, coarse
 * solve) and writes the relative error in percent to `e2_percent`.
 *
 * # Safety
 * `cfg` must be a live configuration handle; `e2_percent` non-null.
 */
int32_t mc_compare_run(const struct McConfig *cfg, double *e2_percent);

/**
 * Solves the cell problems on every coarse cell and returns a handle to
 * the effective coefficients.
 *
 * # Safety
 * `cfg` must be a live configuration handle; `out` non-null.
 */
int32_t mc_upscale_run(const struct McConfig *cfg, struct McUpscale **out);

/**
 * Releases an upscaling handle. Null is a no-op.
 *
 * # Safety
 * `up` must come from `mc_upscale_run` and not be freed twice.
 */
void mc_upscale_free(struct McUpscale *up);

/**
 * Coarse cells per side of an upscaling result.
 *
 * # Safety
 * `up` must be a live upscaling handle.
 */
size_t mc_upscale_cells_per_side(const struct McUpscale *up);

/**
 * Number of continua of an upscaling result.
 *
 * # Safety
 * `up` must be a live upscaling handle.
 */
size_t mc_upscale_continua(const struct McUpscale *up);

/**
 * Exchange coefficient `beta[i][j]` of one coarse cell, normalized by the
 * RVE volume. Indices are 0-based.
 *
 * # Safety
 * `up` must be a live upscaling handle; `out` non-null.
 */
int32_t mc_upscale_beta(const struct McUpscale *up,
                        size_t cx,
                        size_t cy,
                        size_t i,
                        size_t j,
                        double *out);

/**
 * Effective diffusion entry `alpha[i][j][m][n]` of one coarse cell,
 * normalized by the RVE volume. Direction indices are 0-based.
 *
 * # Safety
 * `up` must be a live upscaling handle; `out` non-null.
 */
int32_t mc_upscale_alpha(const struct McUpscale *up,
                         size_t cx,
                         size_t cy,
                         size_t i,
                         size_t j,
                         size_t m,
                         size_t n,
                         double *out);

/**
 * Source weight `f[i]` of one coarse cell.
 *
 * # Safety
 * `up` must be a live upscaling handle; `out` non-null.
 */
int32_t mc_upscale_source(const struct McUpscale *up, size_t cx, size_t cy, size_t i, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTICONT_H */
