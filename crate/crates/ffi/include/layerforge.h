#ifndef LAYERFORGE_H
#define LAYERFORGE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes.
 */
typedef enum LfStatus {
  LF_STATUS_OK = 0,
  LF_STATUS_NULL_POINTER = 1,
  LF_STATUS_INVALID_ARGUMENT = 2,
  LF_STATUS_PARSE = 3,
  LF_STATUS_DOMAIN = 4,
  LF_STATUS_PANIC = 5,
} LfStatus;

/**
 * Parsed field expression in `y1`, `y2`.
 */
typedef struct LfExpr LfExpr;

/**
 * Ground-state profile and its corrections.
 */
typedef struct LfProfile LfProfile;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len - 1` bytes). Returns the full message length.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lf_last_error_message(char *buf, size_t len);

/**
 * Build the profile for exponent `p` on `[-l, l]` with `n` points.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum LfStatus lf_profile_new(double p, double l, size_t n, struct LfProfile **out);

/**
 * # Safety
 * `h` must come from [`lf_profile_new`] and not be used afterwards.
 */
void lf_profile_free(struct LfProfile *h);

/**
 * `w(x)`.
 *
 * # Safety
 * `h` and `out` must be valid.
 */
enum LfStatus lf_profile_w(const struct LfProfile *h, double x, double *out);

/**
 * Principal eigenfunction `Z(x)`, unit `L^2` norm.
 *
 * # Safety
 * `h` and `out` must be valid.
 */
enum LfStatus lf_profile_z(const struct LfProfile *h, double x, double *out);

/**
 * Principal eigenvalue `lambda0`.
 *
 * # Safety
 * `h` and `out` must be valid.
 */
enum LfStatus lf_profile_lambda0(const struct LfProfile *h, double *out);

/**
 * The four interaction constants, written to `out[0..4]`.
 *
 * # Safety
 * `h` must be valid and `out` must point to 4 writable doubles.
 */
enum LfStatus lf_profile_rho(const struct LfProfile *h, double *out);

/**
 * Parse an expression in `y1`, `y2`.
 *
 * # Safety
 * `src` must be a NUL-terminated string and `out` a valid pointer.
 */
enum LfStatus lf_expr_parse(const char *src, struct LfExpr **out);

/**
 * # Safety
 * `h` must come from [`lf_expr_parse`] and not be used afterwards.
 */
void lf_expr_free(struct LfExpr *h);

/**
 * Value at `(y1, y2)`.
 *
 * # Safety
 * `h` and `out` must be valid.
 */
enum LfStatus lf_expr_eval(const struct LfExpr *h, double y1, double y2, double *out);

/**
 * Value, gradient and Hessian: `out = [v, d1, d2, h11, h12, h22]`.
 *
 * # Safety
 * `h` must be valid and `out` must point to 6 writable doubles.
 */
enum LfStatus lf_expr_jet(const struct LfExpr *h, double y1, double y2, double *out);

/**
 * Root of `exp(-rho) = eps^2 c rho`.
 *
 * # Safety
 * `out` must be valid.
 */
enum LfStatus lf_rho_epsilon(double eps, double c, double *out);

/**
 * Gap condition at one `eps`: `*out_j = 0` when admissible, otherwise the
 * first resonant mode.
 *
 * # Safety
 * `out_j` must be valid.
 */
enum LfStatus lf_gap_check(double eps, double lambda_star, double c_tilde, size_t *out_j);

/**
 * Run a pipeline command on a configuration file, as the command-line tool
 * does. `out_dir` may be null (configuration default). The tool's exit
 * code goes to `exit_code`; the status reports only argument problems. When
 * the run fails its reason is available from [`lf_last_error_message`].
 *
 * # Safety
 * `command` and `config` must be NUL-terminated strings, `out_dir` null or
 * NUL-terminated, `exit_code` valid.
 */
enum LfStatus lf_run_config(const char *command,
                            const char *config,
                            const char *out_dir,
                            uint64_t seed,
                            double tol_scale,
                            int32_t *exit_code);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LAYERFORGE_H */
