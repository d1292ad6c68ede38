#ifndef SPHERE_AERO_H
#define SPHERE_AERO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SaStatus {
  SA_STATUS_OK = 0,
  SA_STATUS_NULL_POINTER = 1,
  SA_STATUS_INVALID_UTF8 = 2,
  SA_STATUS_INVALID_CONFIG = 3,
  SA_STATUS_INVALID_ARGUMENT = 4,
  SA_STATUS_COMMAND_REJECTED = 5,
  SA_STATUS_NUMERICAL_FAILURE = 6,
  SA_STATUS_NOT_READY = 7,
  SA_STATUS_IO = 8,
  SA_STATUS_PANIC = 9,
} SaStatus;

// Opaque engine handle.
typedef struct SaEngine SaEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates an engine from a JSON config; a null `config_json` uses the
// defaults. `*out` is set only on success.
//
// # Safety
// `config_json` is null or a NUL-terminated string; `out` is writable.
enum SaStatus sa_engine_new(const char *config_json, struct SaEngine **out);

// # Safety
// `engine` is null or a handle from [`sa_engine_new`] not yet freed.
void sa_engine_free(struct SaEngine *engine);

// Advances `steps` full pipeline steps. A solver failure pauses the engine.
//
// # Safety
// `engine` is a live handle.
enum SaStatus sa_engine_step(struct SaEngine *engine, uint32_t steps);

// Applies one command, e.g. `{"kind":"set_dt","value":0.002}`.
//
// # Safety
// `engine` is a live handle; `command_json` is NUL-terminated.
enum SaStatus sa_engine_command(struct SaEngine *engine, const char *command_json);

// Writes the current snapshot as a wire `snapshot` message.
//
// # Safety
// `engine` is a live handle; `out` is writable. Free the result with
// [`sa_string_free`].
enum SaStatus sa_engine_snapshot_json(struct SaEngine *engine, char **out);

// Completed steps and simulated time.
//
// # Safety
// `engine` is a live handle; the out pointers are null or writable.
enum SaStatus sa_engine_progress(struct SaEngine *engine, uint64_t *step, double *time);

// Latest far-field pressure at the observer and the synthesis amplitude.
//
// # Safety
// `engine` is a live handle; the out pointers are null or writable.
enum SaStatus sa_engine_acoustics(struct SaEngine *engine, double *p_prime, double *amplitude);

// Renders `len` mono samples from the oscillator bank at the configured
// sample rate, without advancing the simulation.
//
// # Safety
// `engine` is a live handle; `out` points to `len` writable floats.
enum SaStatus sa_engine_render_audio(struct SaEngine *engine, float *out, size_t len);

// Manufactured velocity, density and pressure at a point.
//
// # Safety
// `u` points to 3 writable doubles; `rho` and `p` are null or writable.
enum SaStatus sa_mms_fields(double x, double y, double z, double *u, double *rho, double *p);

// Message of the last failure on this thread, or null. Owned by the library.
const char *sa_last_error(void);

// # Safety
// `s` is null or a string returned by this library, freed at most once.
void sa_string_free(char *s);

// Library version, static.
const char *sa_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPHERE_AERO_H */
