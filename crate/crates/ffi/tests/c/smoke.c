#include <math.h>
#include <stdio.h>
#include "expertdp.h"

int main(void) {
    EdpReleaseParams p;
    if (edp_derive_release_params(10.0, 1.0 / 3000.0, 25, 32, 0.02, &p) != EDP_STATUS_OK) return 1;
    double e, d;
    if (edp_check_release_budget(&p, &e, &d) != EDP_STATUS_OK) return 2;
    if (!(e <= 10.0 && d <= p.delta1 * (1.0 + 1e-12))) return 3;
    if (edp_derive_release_params(-1.0, 0.1, 1, 1, 0.02, &p) != EDP_STATUS_INVALID_ARGUMENT) return 4;
    if (edp_last_error_message() == NULL) return 5;
    EdpRng *rng = NULL;
    if (edp_rng_new(7, &rng) != EDP_STATUS_OK) return 6;
    double x;
    if (edp_rng_laplace(rng, 1.0, &x) != EDP_STATUS_OK || !isfinite(x)) return 7;
    edp_rng_free(rng);
    printf("%.6f %.6g\n", e, d);
    return 0;
}
