#include <math.h>
#include <stdio.h>
#include <string.h>

#include "multilevel.h"

#define EXPECT(cond)                                             \
  do {                                                           \
    if (!(cond)) {                                               \
      fprintf(stderr, "%s:%d: failed: %s\n", __FILE__, __LINE__, #cond); \
      return 1;                                                  \
    }                                                            \
  } while (0)

int main(void) {
  MlWeights *w = NULL;
  EXPECT(ml_weights_new(1.0, 2, 3, &w) == ML_STATUS_OK);
  EXPECT(ml_weights_depth(w) == 3);
  double cum[3];
  EXPECT(ml_weights_cumulative(w, cum, 3) == ML_STATUS_OK);
  EXPECT(fabs(cum[0] - 1.0) < 1e-12);
  EXPECT(fabs(cum[1] - 2.0 / 3.0) < 1e-12);
  EXPECT(fabs(cum[2] - 8.0 / 3.0) < 1e-12);
  EXPECT(ml_weights_cumulative(w, cum, 2) == ML_STATUS_BUFFER_TOO_SMALL);
  ml_weights_free(w);

  EXPECT(ml_weights_new(1.0, 1, 3, &w) == ML_STATUS_INVALID_ARGUMENT);
  EXPECT(ml_last_error_message() != NULL);

  MlStructuralParams p = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  MlPlan *plan = NULL;
  EXPECT(ml_plan_calibrate(ML_ESTIMATOR_KIND_ML2R, 0.03125, &p, 2, &plan) == ML_STATUS_OK);
  EXPECT(ml_plan_depth(plan) == 5);
  uint64_t sizes[5];
  EXPECT(ml_plan_level_sizes(plan, sizes, 5) == ML_STATUS_OK);
  EXPECT(sizes[0] > 0);
  char *json = NULL;
  EXPECT(ml_plan_to_json(plan, &json) == ML_STATUS_OK);
  EXPECT(strstr(json, "\"kind\":\"ml2r\"") != NULL);
  ml_string_free(json);
  ml_plan_free(plan);

  double price = 0.0;
  EXPECT(ml_black_scholes_call(100.0, 100.0, 0.05, 0.2, 1.0, &price) == ML_STATUS_OK);
  EXPECT(fabs(price - 10.450583572185565) < 1e-9);

  printf("ok\n");
  return 0;
}
