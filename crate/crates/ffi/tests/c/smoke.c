#include <math.h>
#include <stdio.h>

#include "lipcert.h"

int main(int argc, char **argv) {
  if (argc < 2) {
    fprintf(stderr, "usage: smoke MODEL\n");
    return 2;
  }
  double w[4] = {2.0, 0.0, 0.0, 1.0};
  double b[2] = {-1.0, 0.0};
  LipcertLayer *layer = NULL;
  if (lipcert_layer_dense_new(2, 2, w, b, &layer) != LIPCERT_STATUS_OK) {
    fprintf(stderr, "dense_new: %s\n", lipcert_last_error_message());
    return 1;
  }
  LipcertOptions opts;
  lipcert_options_default(&opts);
  opts.spectral_slack = 0.0;
  opts.lower_samples = 0;
  LipcertBoundReport r;
  if (lipcert_layer_bounds(layer, LIPCERT_NORM_L2, 1.0, false, &opts, &r) != LIPCERT_STATUS_OK) {
    fprintf(stderr, "bounds: %s\n", lipcert_last_error_message());
    return 1;
  }
  lipcert_layer_free(layer);
  if (fabs(r.nested - 1.5) > 1e-9 || fabs(r.naive - 2.0) > 1e-9) {
    fprintf(stderr, "unexpected bounds %g %g\n", r.naive, r.nested);
    return 1;
  }

  LipcertModel *model = NULL;
  if (lipcert_model_load(argv[1], &model) != LIPCERT_STATUS_OK) {
    fprintf(stderr, "load: %s\n", lipcert_last_error_message());
    return 1;
  }
  double product = 0.0;
  LipcertStatus s = lipcert_model_propagate(model, NULL, 0, 0.1, LIPCERT_METHOD_NESTED, NULL, &product, NULL, 0);
  lipcert_model_free(model);
  if (s != LIPCERT_STATUS_OK || !(product > 0.0)) {
    fprintf(stderr, "propagate: %d\n", (int)s);
    return 1;
  }
  printf("ok %s nested=%.6f product=%.6f\n", lipcert_version(), r.nested, product);
  return 0;
}
