#ifndef SURVATT_H
#define SURVATT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every call. Values are stable.
typedef enum SurvattStatus {
  SURVATT_STATUS_OK = 0,
  SURVATT_STATUS_NULL_ARGUMENT = 1,
  SURVATT_STATUS_INVALID_ARGUMENT = 2,
  SURVATT_STATUS_CONFIG = 3,
  SURVATT_STATUS_IO = 4,
  SURVATT_STATUS_DATA = 5,
  SURVATT_STATUS_ESTIMATION = 6,
  SURVATT_STATUS_NO_TREATED_PERSON_TIME = 7,
  SURVATT_STATUS_PANIC = 9,
} SurvattStatus;

// When a treatment start begins to act on the covariates.
typedef enum SurvattTiming {
  SURVATT_TIMING_LAGGED = 0,
  SURVATT_TIMING_CONCURRENT = 1,
} SurvattTiming;

// Curves held by an ATT result.
typedef enum SurvattCurve {
  // Plug-in estimate, equal to direct plus indirect.
  SURVATT_CURVE_DIRECT = 0,
  // Treatment coefficient of the fit on the manipulated panel.
  SURVATT_CURVE_SHORTCUT = 1,
  SURVATT_CURVE_MEDIATION_DIRECT = 2,
  SURVATT_CURVE_MEDIATION_INDIRECT = 3,
} SurvattCurve;

// Opaque ATT estimate handle.
typedef struct SurvattAtt SurvattAtt;

// Opaque panel handle.
typedef struct SurvattPanel SurvattPanel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static nul-terminated string.
const char *survatt_version(void);

// Message of the last failed call on this thread, or null.
//
// The pointer stays valid until the next failing call on the same thread.
const char *survatt_last_error_message(void);

// Reads a long-format CSV panel.
//
// `schema_toml` maps column roles to headers; when null the roles are
// inferred from the header line. Sparse panels are expanded by carrying the
// last measurement forward.
//
// # Safety
// String arguments are null or nul-terminated; `out` is valid for writes.
enum SurvattStatus survatt_panel_read_csv(const char *path,
                                          const char *schema_toml,
                                          struct SurvattPanel **out);

// Simulates the observed arm of one regime with the default generator.
//
// `regime` is 1, 2 or 3 for the confounded regimes and 0 for randomized
// treatment.
//
// # Safety
// `out` is valid for writes.
enum SurvattStatus survatt_panel_simulate(uint32_t regime,
                                          size_t n,
                                          uint64_t seed,
                                          struct SurvattPanel **out);

// # Safety
// `panel` is null or a live handle; `out` is valid for writes.
enum SurvattStatus survatt_panel_subject_count(const struct SurvattPanel *panel, size_t *out);

// Last interval index of the grid.
//
// # Safety
// `panel` is null or a live handle; `out` is valid for writes.
enum SurvattStatus survatt_panel_t_max(const struct SurvattPanel *panel, uint32_t *out);

// # Safety
// `panel` is null or a handle not yet freed.
void survatt_panel_free(struct SurvattPanel *panel);

// Counterfactual imputation, outcome fits and mediation decomposition with
// the default model: every covariate in the outcome and increment models.
//
// # Safety
// `panel` is null or a live handle; `out` is valid for writes.
enum SurvattStatus survatt_att_estimate(const struct SurvattPanel *panel,
                                        enum SurvattTiming timing,
                                        bool ipcw,
                                        struct SurvattAtt **out);

// Number of grid points in every curve of the result (`t_max + 1`).
//
// # Safety
// `att` is null or a live handle; `out` is valid for writes.
enum SurvattStatus survatt_att_len(const struct SurvattAtt *att, size_t *out);

// Copies one curve into `values` and, when `se` is not null, its robust
// standard errors (NaN where none is defined). Both buffers hold `len`
// doubles; `len` must be at least [`survatt_att_len`].
//
// # Safety
// `att` is null or a live handle; non-null buffers hold `len` doubles.
enum SurvattStatus survatt_att_curve(const struct SurvattAtt *att,
                                     enum SurvattCurve curve,
                                     double *values,
                                     double *se,
                                     size_t len);

// # Safety
// `att` is null or a handle not yet freed.
void survatt_att_free(struct SurvattAtt *att);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SURVATT_H */
