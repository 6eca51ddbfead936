#ifndef TT_TODA_H
#define TT_TODA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TtStatus {
  TT_STATUS_OK = 0,
  TT_STATUS_NULL_POINTER = 1,
  TT_STATUS_INVALID_INPUT = 2,
  TT_STATUS_NON_GENERIC = 3,
  TT_STATUS_DIMENSION_MISMATCH = 4,
  TT_STATUS_GAMMA_POLE = 5,
  TT_STATUS_SINGULAR = 6,
  TT_STATUS_INTEGRATION = 7,
  TT_STATUS_NOT_CONVERGED = 8,
  TT_STATUS_DOMAIN = 9,
  TT_STATUS_BUFFER_TOO_SMALL = 10,
  TT_STATUS_PANIC = 11,
} TtStatus;

/*
 Monodromy data for one asymptotic vector `m`.
 */
typedef struct TtMonodromy TtMonodromy;

/*
 A converged radial solution together with its reduction.
 */
typedef struct TtSolution TtSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Builds monodromy data from `m` (the first `d` entries or all `n+1`) with
 `c_hat = c_hat^id`.

 # Safety
 `m` must point to `m_len` doubles and `out` must be writable.
 */
enum TtStatus tt_monodromy_new(size_t nplus1,
                               const double *m,
                               size_t m_len,
                               struct TtMonodromy **out);

/*
 # Safety
 `handle` must be null or come from [`tt_monodromy_new`] and not be freed yet.
 */
void tt_monodromy_free(struct TtMonodromy *handle);

/*
 Stokes parameters `s_0..s_(n+1)`.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_monodromy_stokes(const struct TtMonodromy *handle,
                                  double *out,
                                  size_t cap,
                                  size_t *len_out);

/*
 Eigenvalues `e_0..e_n` of the connection matrix.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_monodromy_connection_eigs(const struct TtMonodromy *handle,
                                           double *out,
                                           size_t cap,
                                           size_t *len_out);

/*
 The constants `c_hat^id_0..c_hat^id_n` of the global solution.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_monodromy_chat(const struct TtMonodromy *handle,
                                double *out,
                                size_t cap,
                                size_t *len_out);

/*
 Solves the radial problem on `nodes` points of `[s_min, s_max]` in `s = log r`.

 # Safety
 `m` must point to `m_len` doubles and `out` must be writable.
 */
enum TtStatus tt_solve(size_t nplus1,
                       const double *m,
                       size_t m_len,
                       double s_min,
                       double s_max,
                       size_t nodes,
                       struct TtSolution **out);

/*
 # Safety
 `handle` must be null or come from [`tt_solve`] and not be freed yet.
 */
void tt_solution_free(struct TtSolution *handle);

/*
 Number of unknown components and grid nodes.

 # Safety
 `handle` must be live and both outputs writable.
 */
enum TtStatus tt_solution_shape(const struct TtSolution *handle, size_t *components, size_t *nodes);

/*
 Grid nodes in `s = log r`.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_solution_grid(const struct TtSolution *handle,
                               double *out,
                               size_t cap,
                               size_t *len_out);

/*
 Values of component `index` (zero-based) at every node.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_solution_component(const struct TtSolution *handle,
                                    size_t index,
                                    double *out,
                                    size_t cap,
                                    size_t *len_out);

/*
 Stokes parameters `s_1..s_d` fitted from the far-field decay.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_solution_fit_stokes(const struct TtSolution *handle,
                                     double *out,
                                     size_t cap,
                                     size_t *len_out);

/*
 Origin constants fitted near `r = 0`; compare with `-log c_hat^id`.

 # Safety
 `handle` must be live; see the module docs for the buffer contract.
 */
enum TtStatus tt_solution_fit_constants(const struct TtSolution *handle,
                                        double *out,
                                        size_t cap,
                                        size_t *len_out);

/*
 NUL-terminated message of the last failure on this thread, or an empty
 string. Valid until the next failing call on the same thread.
 */
const char *tt_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *tt_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TT_TODA_H */
