#ifndef PARETO_ISAC_H
#define PARETO_ISAC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status code of every call.
 */
typedef enum PiStatus {
  PI_STATUS_OK = 0,
  PI_STATUS_NULL_POINTER = 1,
  PI_STATUS_INVALID_ARGUMENT = 2,
  PI_STATUS_CONFIG = 3,
  PI_STATUS_DIMENSION = 4,
  PI_STATUS_INFEASIBLE = 5,
  PI_STATUS_SOLVER = 6,
  PI_STATUS_IO = 7,
  /**
   * The caller's buffer is shorter than the required length, which is still written.
   */
  PI_STATUS_BUFFER_TOO_SMALL = 8,
  PI_STATUS_CHECK_FAILED = 9,
  PI_STATUS_PANIC = 10,
} PiStatus;

/**
 * System configuration, solver settings and seed.
 */
typedef struct PiConfig PiConfig;

/**
 * A solved trial together with the scenario it was solved on.
 */
typedef struct PiPoint PiPoint;

typedef struct PiSystemInfo {
  size_t n_tx;
  size_t n_rf;
  size_t n_cu;
  size_t n_tar;
  size_t frame_budget;
  /**
   * Watts.
   */
  double p_max;
  double noise;
  /**
   * Infinity when unbounded.
   */
  double e_max;
  uint64_t seed;
} PiSystemInfo;

typedef struct PiPointSummary {
  /**
   * Sum rate, nats per channel use.
   */
  double rate;
  double rbe;
  bool feasible;
  size_t outer_iterations;
  size_t n_tx;
  size_t n_streams;
} PiPointSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *pi_version(void);

/**
 * Message of the last failed call on this thread, or null after a successful one.
 * The pointer stays valid until the next call on this thread.
 */
const char *pi_last_error(void);

/**
 * Default configuration.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum PiStatus pi_config_default(struct PiConfig **out);

/**
 * Configuration parsed from TOML text in the CLI's config format.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum PiStatus pi_config_from_toml(const char *toml, struct PiConfig **out);

/**
 * # Safety
 * `cfg` must be null or a handle from `pi_config_*` not yet freed.
 */
void pi_config_free(struct PiConfig *cfg);

/**
 * Sets one sweep parameter by axis name: `e_max`, `frame_budget`, `eps`,
 * `n_rf`, `eta` or `p_max` (watts). An infinite `e_max` removes the bound.
 *
 * # Safety
 * `cfg` must be a live handle and `axis` a NUL-terminated string.
 */
enum PiStatus pi_config_set(struct PiConfig *cfg, const char *axis, double value);

/**
 * # Safety
 * `cfg` must be a live handle.
 */
enum PiStatus pi_config_set_seed(struct PiConfig *cfg, uint64_t seed);

/**
 * # Safety
 * `cfg` must be a live handle and `out` a valid pointer.
 */
enum PiStatus pi_config_info(const struct PiConfig *cfg, struct PiSystemInfo *out);

/**
 * Solves one trial with `scheme` (`tlbs_bmm`, `tlbs_epmo`, `tlbs_fdb` or
 * `ibl_fdb`). Channels and the initial precoder come from the config's seed
 * and `trial`, as in the CLI. An infeasible point is still returned with
 * status `Ok`; query its summary.
 *
 * # Safety
 * `cfg` must be a live handle, `scheme` a NUL-terminated string and `out` a valid pointer.
 */
enum PiStatus pi_solve(const struct PiConfig *cfg,
                       const char *scheme,
                       size_t trial,
                       struct PiPoint **out);

/**
 * # Safety
 * `pt` must be null or a handle from `pi_solve` not yet freed.
 */
void pi_point_free(struct PiPoint *pt);

/**
 * # Safety
 * `pt` must be a live handle and `out` a valid pointer.
 */
enum PiStatus pi_point_summary(const struct PiPoint *pt, struct PiPointSummary *out);

/**
 * Block lengths per user.
 *
 * # Safety
 * `pt` must be a live handle, `buf` valid for `len` writes and `required` a valid pointer.
 */
enum PiStatus pi_point_beta(const struct PiPoint *pt, size_t *buf, size_t len, size_t *required);

/**
 * Achieved SINR per user, linear.
 *
 * # Safety
 * As for `pi_point_beta`.
 */
enum PiStatus pi_point_sinr(const struct PiPoint *pt, double *buf, size_t len, size_t *required);

/**
 * The overall precoder `F_RF F_BB`, column-major with interleaved real and
 * imaginary parts (`2 * n_tx * n_streams` doubles).
 *
 * # Safety
 * As for `pi_point_beta`.
 */
enum PiStatus pi_point_precoder(const struct PiPoint *pt,
                                double *buf,
                                size_t len,
                                size_t *required);

/**
 * Linear transmit gain at `n` angles in degrees.
 *
 * # Safety
 * `pt` must be a live handle; `angles` and `gains` must be valid for `n` elements.
 */
enum PiStatus pi_point_beampattern(const struct PiPoint *pt,
                                   const double *angles,
                                   size_t n,
                                   double *gains);

/**
 * Re-checks a feasible point against the model: constraints, reported RBE
 * and rate. Returns `CheckFailed` with the reason otherwise.
 *
 * # Safety
 * `pt` must be a live handle.
 */
enum PiStatus pi_point_check(const struct PiPoint *pt);

/**
 * Smallest SINR whose finite-blocklength rate at block length `beta` and
 * error probability `eps` reaches `target` nats.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum PiStatus pi_gamma_threshold(double target, double beta, double eps, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PARETO_ISAC_H */
