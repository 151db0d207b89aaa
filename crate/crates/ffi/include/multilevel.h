#ifndef MULTILEVEL_H
#define MULTILEVEL_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum MlStatus {
  ML_STATUS_OK = 0,
  ML_STATUS_NULL_POINTER = 1,
  ML_STATUS_INVALID_ARGUMENT = 2,
  ML_STATUS_CONFIG = 3,
  ML_STATUS_BUDGET_EXCEEDED = 4,
  ML_STATUS_NUMERICAL = 5,
  ML_STATUS_IO = 6,
  ML_STATUS_BUFFER_TOO_SMALL = 7,
  ML_STATUS_PANIC = 8,
} MlStatus;

typedef enum MlEstimatorKind {
  ML_ESTIMATOR_KIND_MLMC = 0,
  ML_ESTIMATOR_KIND_ML2R = 1,
} MlEstimatorKind;

// Opaque calibrated plan.
typedef struct MlPlan MlPlan;

// Opaque ML2R weight table.
typedef struct MlWeights MlWeights;

// Structural constants of a problem, passed by value.
typedef struct MlStructuralParams {
  // Weak error rate.
  double alpha;
  // Strong error rate.
  double beta;
  // Coarsest bias parameter.
  double h_bold;
  double var_y0;
  double v1;
  // Bias constant used by the depth and bias-parameter formulas.
  double c_hat;
} MlStructuralParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *ml_last_error_message(void);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void ml_string_free(char *s);

// Builds the ML2R weight table for weak rate `alpha`, root `root` and
// depth `depth`.
//
// # Safety
// `out` must be a valid pointer to writable storage.
enum MlStatus ml_weights_new(double alpha, uint32_t root, size_t depth, struct MlWeights **out);

// Number of levels, or 0 for a null handle.
//
// # Safety
// `w` must be null or a live handle.
size_t ml_weights_depth(const struct MlWeights *w);

// Copies the raw weights into `out[0..depth]`.
//
// # Safety
// `w` must be a live handle and `out` must hold `len` doubles.
enum MlStatus ml_weights_raw(const struct MlWeights *w, double *out, size_t len);

// Copies the cumulative weights into `out[0..depth]`.
//
// # Safety
// `w` must be a live handle and `out` must hold `len` doubles.
enum MlStatus ml_weights_cumulative(const struct MlWeights *w, double *out, size_t len);

// # Safety
// `w` must be null or a live handle, which is invalid afterwards.
void ml_weights_free(struct MlWeights *w);

// Calibrates a plan for target RMSE `epsilon`.
//
// # Safety
// `params` must point to a valid struct and `out` to writable storage.
enum MlStatus ml_plan_calibrate(enum MlEstimatorKind kind,
                                double epsilon,
                                const struct MlStructuralParams *params,
                                uint32_t root,
                                struct MlPlan **out);

// Depth of the plan, or 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
size_t ml_plan_depth(const struct MlPlan *p);

// Total estimator size `N`, or 0 for a null handle.
//
// # Safety
// `p` must be null or a live handle.
uint64_t ml_plan_total_samples(const struct MlPlan *p);

// Bias parameter of the plan, or NaN for a null handle.
//
// # Safety
// `p` must be null or a live handle.
double ml_plan_bias_parameter(const struct MlPlan *p);

// Cost predicted by the calibration, or NaN for a null handle.
//
// # Safety
// `p` must be null or a live handle.
double ml_plan_theoretical_cost(const struct MlPlan *p);

// Copies the per-level sample sizes into `out[0..depth]`.
//
// # Safety
// `p` must be a live handle and `out` must hold `len` integers.
enum MlStatus ml_plan_level_sizes(const struct MlPlan *p, uint64_t *out, size_t len);

// Serialises the plan to JSON. Free the result with [`ml_string_free`].
//
// # Safety
// `p` must be a live handle and `out` writable.
enum MlStatus ml_plan_to_json(const struct MlPlan *p, char **out);

// # Safety
// `p` must be null or a live handle, which is invalid afterwards.
void ml_plan_free(struct MlPlan *p);

// Closed-form Black-Scholes call price.
//
// # Safety
// `out` must be writable.
enum MlStatus ml_black_scholes_call(double spot,
                                    double strike,
                                    double rate,
                                    double vol,
                                    double horizon,
                                    double *out);

// Runs the experiment described by a JSON config and returns the study
// document as JSON. Nothing is written to disk.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` writable.
enum MlStatus ml_run_json(const char *config_json, char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MULTILEVEL_H */
