#include <stdio.h>
#include <string.h>

#include "fedcorr.h"

#define CHECK(call)                                                        \
  do {                                                                     \
    FcStatus s_ = (call);                                                  \
    if (s_ != FC_STATUS_OK) {                                              \
      fprintf(stderr, "%s -> %d: %s\n", #call, (int)s_, fc_last_error()); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

int main(void) {
  const char *toml =
      "n_samples = 300\nn_test = 100\nn_clients = 5\ndim = 4\nhidden = 6\n"
      "t1 = 1\nt2 = 2\nt3 = 2\nfraction = 0.4\nlocal_epochs = 1\n";
  FcConfig *cfg = NULL;
  CHECK(fc_config_from_toml(toml, &cfg));
  CHECK(fc_config_set(cfg, "rho", "0.4"));
  CHECK(fc_config_set(cfg, "tau", "7"));
  if (fc_config_validate(cfg) != FC_STATUS_CONFIG) return 2;
  if (strstr(fc_last_error(), "tau") == NULL) return 3;
  CHECK(fc_config_set(cfg, "tau", "0.5"));

  FcResult *res = NULL;
  CHECK(fc_run(cfg, &res));
  double acc = -1.0;
  size_t rounds = 0;
  CHECK(fc_result_final_accuracy(res, &acc));
  CHECK(fc_result_n_rounds(res, &rounds));
  if (acc < 0.0 || acc > 1.0 || rounds != 9) return 4;

  char *json = NULL;
  CHECK(fc_result_to_json(res, &json));
  if (strstr(json, "final_accuracy") == NULL) return 5;
  fc_string_free(json);

  double d[3] = {1.0, 2.0, 4.0};
  double lid = 0.0;
  CHECK(fc_lid_mle(d, 3, 100.0, &lid));
  FcGmmFit fit;
  double v[6] = {0.0, 0.1, 0.2, 5.0, 5.1, 5.2};
  CHECK(fc_fit_gmm2(v, 6, &fit));

  fc_result_free(res);
  fc_config_free(cfg);
  printf("ok %s %.4f %zu\n", fc_version(), acc, rounds);
  return 0;
}
