#include <math.h>
#include <stdio.h>
#include "breathsync.h"

int main(void) {
    bs_engine *e = NULL;
    if (bs_engine_new_fixed_tempo(100.0, &e) != BS_STATUS_OK) return 1;
    double lo = 2.0, hi = 0.0, g;
    for (int i = 0; i < 1000; i++) {
        if (bs_engine_tick(e, &g) != BS_STATUS_OK) return 2;
        if (g < lo) lo = g;
        if (g > hi) hi = g;
    }
    bs_engine_free(e);
    if (fabs(hi / lo - 2.0) > 1e-9) return 3;

    if (bs_engine_new_fixed_tempo(1.0, &e) != BS_STATUS_INVALID_ARGUMENT) return 4;
    if (bs_last_error() == NULL) return 5;

    double groups[] = {1, 2, 3, 2, 3, 4, 3, 4, 5};
    size_t sizes[] = {3, 3, 3};
    double f, p;
    if (bs_one_way_anova(groups, sizes, 3, &f, &p) != BS_STATUS_OK) return 6;
    if (fabs(f - 3.0) > 1e-9) return 7;
    printf("ok %.3f %.4f\n", f, p);
    return 0;
}
