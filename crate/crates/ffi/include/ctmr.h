#ifndef CTMR_H
#define CTMR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum CtmrStatus {
  CTMR_STATUS_OK = 0,
  CTMR_STATUS_NULL_POINTER = 1,
  CTMR_STATUS_INVALID_ARGUMENT = 2,
  CTMR_STATUS_CONFIG = 3,
  CTMR_STATUS_RUN_COMPLETE = 4,
  CTMR_STATUS_INTERNAL = 5,
  CTMR_STATUS_PANIC = 6,
} CtmrStatus;

// Opaque simulation handle.
typedef struct CtmrSim CtmrSim;

// The chunk broadcast on a tick. `present` is 0 while the pipeline fills.
typedef struct CtmrWinner {
  uint8_t present;
  uint32_t origin;
  uint64_t time;
  double weight;
  double intensity;
  double mood;
} CtmrWinner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds a simulation from a TOML scenario. On success `*out` owns a handle
// to be released with [`ctmr_sim_free`].
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a writable pointer.
enum CtmrStatus ctmr_sim_from_toml(const char *toml, struct CtmrSim **out);

// Builds one of the bundled scenarios with the given seed.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a writable pointer.
enum CtmrStatus ctmr_sim_from_builtin(const char *name, uint64_t seed, struct CtmrSim **out);

// Releases a handle. Null is ignored.
//
// # Safety
// `sim` must come from a constructor above and not be used afterwards.
void ctmr_sim_free(struct CtmrSim *sim);

// Advances one tick. `out` may be null.
//
// # Safety
// `sim` must be a live handle and `out` null or writable.
enum CtmrStatus ctmr_sim_tick(struct CtmrSim *sim, struct CtmrWinner *out);

// Runs up to `ticks` ticks, stopping early at the end of the lifetime.
// `winners` (may be null) receives the number of broadcasts.
//
// # Safety
// `sim` must be a live handle and `winners` null or writable.
enum CtmrStatus ctmr_sim_run(struct CtmrSim *sim, uint64_t ticks, uint64_t *winners);

// Ticks completed so far.
//
// # Safety
// `sim` must be null or a live handle. Null yields 0.
uint64_t ctmr_sim_current_tick(const struct CtmrSim *sim);

// Number of processors (leaves) in the tree.
//
// # Safety
// `sim` must be null or a live handle. Null yields 0.
uint64_t ctmr_sim_processors(const struct CtmrSim *sim);

// Restarts competition under a new disposition, keeping all learned state.
//
// # Safety
// `sim` must be a live handle.
enum CtmrStatus ctmr_sim_reboot(struct CtmrSim *sim, double disposition);

// Applies a fault now, written as on the command line, e.g.
// `zero_confidence:vision`.
//
// # Safety
// `sim` must be a live handle and `fault` a NUL-terminated string.
enum CtmrStatus ctmr_sim_inject(struct CtmrSim *sim, const char *fault);

// `max(0, |w| + d*w)` for a single chunk of weight `w`.
//
// # Safety
// `out` must be writable.
enum CtmrStatus ctmr_f_value(double weight, double disposition, double *out);

// Probability that each of `n` leaves with the given weights wins one
// competition. `n` must be a power of two; `out` holds `n` doubles.
//
// # Safety
// `weights` must hold `n` readable doubles and `out` `n` writable ones.
enum CtmrStatus ctmr_win_distribution(const double *weights,
                                      uintptr_t n,
                                      double disposition,
                                      double *out);

// Message for the last failed call on this thread, empty after a success.
// Valid until the next call on the same thread.
const char *ctmr_last_error(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CTMR_H */
