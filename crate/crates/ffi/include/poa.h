#ifndef POA_H
#define POA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PoaStatus {
  POA_STATUS_OK = 0,
  POA_STATUS_NULL_POINTER = 1,
  POA_STATUS_INVALID_ARGUMENT = 2,
  POA_STATUS_DOMAIN_ERROR = 3,
  POA_STATUS_FIT_ERROR = 4,
  POA_STATUS_BACKEND_ERROR = 5,
  POA_STATUS_INCONSISTENT_REPORT = 6,
  POA_STATUS_PANIC = 99,
} PoaStatus;

/**
 * Author identity handle.
 */
typedef struct PoaIdentity PoaIdentity;

/**
 * Generation-parameter handle.
 */
typedef struct PoaKappa PoaKappa;

/**
 * Adjudication report handle.
 */
typedef struct PoaReport PoaReport;

/**
 * Generalized-normal parameters.
 */
typedef struct PoaGenNorm {
  double mu;
  double gamma;
  double beta;
} PoaGenNorm;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version; static storage, never freed.
 */
const char *poa_version(void);

/**
 * Message of the last failure on this thread, or NULL. Valid until the
 * next call into this library on the same thread.
 */
const char *poa_last_error(void);

/**
 * # Safety
 * `id` points to 32 readable bytes, `label` is a NUL-terminated string and
 * `out` is writable.
 */
enum PoaStatus poa_identity_new(const uint8_t *id,
                                const char *label,
                                uint64_t registered_at,
                                struct PoaIdentity **out);

/**
 * # Safety
 * `identity` is NULL or came from [`poa_identity_new`] and is not used afterwards.
 */
void poa_identity_free(struct PoaIdentity *identity);

/**
 * Parses a kappa from its JSON form `{"m": {...}, "e_digest": hex, "r": hex}`.
 *
 * # Safety
 * `json` is a NUL-terminated string and `out` is writable.
 */
enum PoaStatus poa_kappa_from_json(const char *json, struct PoaKappa **out);

/**
 * # Safety
 * `kappa` is NULL or came from [`poa_kappa_from_json`] and is not used afterwards.
 */
void poa_kappa_free(struct PoaKappa *kappa);

/**
 * Writes the 32-byte seed `f_i(kappa)` to `out`.
 *
 * # Safety
 * Handles are live and `out` has room for 32 bytes.
 */
enum PoaStatus poa_derive_seed(const struct PoaIdentity *identity,
                               const struct PoaKappa *kappa,
                               uint8_t *out);

/**
 * Fills `out[..count]` with the standard normal stream of `seed`.
 *
 * # Safety
 * `seed` points to 32 bytes and `out` to `count` writable doubles.
 */
enum PoaStatus poa_sample_gaussian(const uint8_t *seed, double *out, size_t count);

/**
 * # Safety
 * `out` is writable.
 */
enum PoaStatus poa_required_samples(double alpha, double delta, size_t *out);

/**
 * `(1/len) x · y`.
 *
 * # Safety
 * `x` and `y` point to `len` doubles; `out` is writable.
 */
enum PoaStatus poa_similarity(const double *x, const double *y, size_t len, double *out);

/**
 * Maximum-likelihood generalized-normal fit.
 *
 * # Safety
 * `samples` points to `len` doubles; `out` is writable.
 */
enum PoaStatus poa_fit_gennorm(const double *samples, size_t len, struct PoaGenNorm *out);

/**
 * `P(max(0, X) >= threshold)` under `params`.
 *
 * # Safety
 * `params` is readable and `out` is writable.
 */
enum PoaStatus poa_tail_prob(const struct PoaGenNorm *params, double threshold, double *out);

/**
 * Adjudicates a contested latent against the built-in surrogate backend.
 * `transform_json` may be NULL; `parallelism` 0 uses all cores.
 *
 * # Safety
 * `latent` points to `shape[0] * shape[1] * shape[2]` doubles, `shape` to
 * three sizes, handles are live, `transform_json` is NULL or a
 * NUL-terminated string and `out` is writable.
 */
enum PoaStatus poa_adjudicate_surrogate(const double *latent,
                                        const size_t *shape,
                                        const struct PoaIdentity *identity,
                                        const struct PoaKappa *kappa,
                                        double alpha,
                                        double delta,
                                        const char *transform_json,
                                        size_t parallelism,
                                        struct PoaReport **out);

/**
 * Canonical JSON of the report; release with [`poa_string_free`].
 *
 * # Safety
 * `report` is live and `out` is writable.
 */
enum PoaStatus poa_report_json(const struct PoaReport *report, char **out);

/**
 * Judge at `p_r`: `accept` is set iff `q_hat + alpha <= p_r`.
 *
 * # Safety
 * `report` is live and `accept` is writable.
 */
enum PoaStatus poa_report_judge(const struct PoaReport *report, double p_r, bool *accept);

/**
 * Reads `q_hat` and `T` from a report.
 *
 * # Safety
 * `report` is live; each out pointer is NULL or writable.
 */
enum PoaStatus poa_report_scores(const struct PoaReport *report, double *q_hat, double *t_score);

/**
 * # Safety
 * `report` is NULL or came from [`poa_adjudicate_surrogate`] and is not used afterwards.
 */
void poa_report_free(struct PoaReport *report);

/**
 * # Safety
 * `s` is NULL or a string returned by this library, not used afterwards.
 */
void poa_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POA_H */
