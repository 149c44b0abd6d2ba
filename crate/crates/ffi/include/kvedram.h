#ifndef KVEDRAM_H
#define KVEDRAM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum KvedramStatus {
  KVEDRAM_STATUS_OK = 0,
  KVEDRAM_STATUS_NULL_POINTER = 1,
  KVEDRAM_STATUS_INVALID_CONFIG = 2,
  KVEDRAM_STATUS_CAPACITY = 3,
  KVEDRAM_STATUS_IO = 4,
  KVEDRAM_STATUS_PARSE = 5,
  KVEDRAM_STATUS_SCHEMA_MISMATCH = 6,
  KVEDRAM_STATUS_INVALID_UTF8 = 7,
  KVEDRAM_STATUS_INTERNAL = 8,
} KvedramStatus;

/*
 The result of one run.
 */
typedef struct KvedramReport KvedramReport;

/*
 A validated run scenario.
 */
typedef struct KvedramScenario KvedramScenario;

/*
 Joules per category.
 */
typedef struct KvedramEnergy {
  double compute;
  double weights;
  double kv_cache;
  double refresh;
  double leakage;
  double dram;
  double total;
} KvedramEnergy;

/*
 Seconds.
 */
typedef struct KvedramLatency {
  double total;
  double prefill;
  double decode;
  double compute;
  double dram;
  double on_chip;
} KvedramLatency;

typedef struct KvedramLifetimes {
  double x;
  double q;
  double k;
  double v;
  double total;
} KvedramLifetimes;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version, static storage.
 */
const char *kvedram_version(void);

/*
 Message for the last failed call on this thread. Valid until the next
 failing call on the same thread.
 */
const char *kvedram_last_error_message(void);

/*
 Build a scenario from a TOML run configuration.

 # Safety
 `toml` must be a NUL-terminated string; `out` must be writable.
 */
enum KvedramStatus kvedram_scenario_from_toml(const char *toml, struct KvedramScenario **out);

/*
 Build a scenario from a task preset and a system name. `system` may be
 null for the default system.

 # Safety
 `preset` and, when non-null, `system` must be NUL-terminated strings;
 `out` must be writable.
 */
enum KvedramStatus kvedram_scenario_from_preset(const char *preset,
                                                const char *system,
                                                struct KvedramScenario **out);

/*
 # Safety
 `scenario` must come from this library and not have been freed.
 */
enum KvedramStatus kvedram_scenario_set_seed(struct KvedramScenario *scenario, uint64_t seed);

/*
 Resolved scenario as JSON.

 # Safety
 `scenario` must be a live handle; `out` must be writable.
 */
enum KvedramStatus kvedram_scenario_to_json(const struct KvedramScenario *scenario, char **out);

/*
 # Safety
 `scenario` must be null or a handle from this library, freed once.
 */
void kvedram_scenario_free(struct KvedramScenario *scenario);

/*
 # Safety
 `scenario` must be a live handle; `out` must be writable.
 */
enum KvedramStatus kvedram_run(const struct KvedramScenario *scenario, struct KvedramReport **out);

/*
 # Safety
 `report` must be null or a handle from this library, freed once.
 */
void kvedram_report_free(struct KvedramReport *report);

/*
 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum KvedramStatus kvedram_report_energy(const struct KvedramReport *report,
                                         struct KvedramEnergy *out);

/*
 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum KvedramStatus kvedram_report_latency(const struct KvedramReport *report,
                                          struct KvedramLatency *out);

/*
 Retention failures per refresh group (MSB-HST, LSB-HST, MSB-LST, LSB-LST).

 # Safety
 `report` must be a live handle; `out` must point to 4 writable values.
 */
enum KvedramStatus kvedram_report_flips(const struct KvedramReport *report, uint64_t *out);

/*
 # Safety
 `report` must be a live handle; `out` must be writable.
 */
enum KvedramStatus kvedram_report_to_json(const struct KvedramReport *report, char **out);

/*
 Parse a report written by `kvedram_report_to_json` or the CLI.

 # Safety
 `json` must be a NUL-terminated string; `out` must be writable.
 */
enum KvedramStatus kvedram_report_from_json(const char *json, struct KvedramReport **out);

/*
 Per-category comparison of `a` against `b`, as JSON.

 # Safety
 `a` and `b` must be live handles; `out` must be writable.
 */
enum KvedramStatus kvedram_diff_json(const struct KvedramReport *a,
                                     const struct KvedramReport *b,
                                     char **out);

/*
 # Safety
 `s` must be null or a string returned by this library, freed once.
 */
void kvedram_string_free(char *s);

/*
 Data lifetimes of one attention block. `kelle` selects the overlapped
 schedule; zero selects the serial one.

 # Safety
 `out` must be writable.
 */
enum KvedramStatus kvedram_lifetime(double t_sram,
                                    double t_edram,
                                    int kelle,
                                    struct KvedramLifetimes *out);

/*
 Latency of fetching `vectors` KV vectors with a fraction `alpha` rebuilt
 on the array instead of loaded.

 # Safety
 `out` must be writable.
 */
enum KvedramStatus kvedram_recompute_tradeoff(double alpha,
                                              size_t vectors,
                                              double load_s,
                                              double recompute_s,
                                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KVEDRAM_H */
