#include <stdio.h>
#include "lfns.h"

int main(void) {
    LfnsModelHandle *model = NULL;
    LfnsStationaryHandle *sol = NULL;
    double h[36 * 1];
    double cost = 0.0;
    LfnsVerdict verdict;

    if (lfns_model_load("auv-paper", &model) != LFNS_STATUS_OK) return 1;
    if (lfns_stationary_solve(model, &sol) != LFNS_STATUS_OK) return 2;
    if (lfns_stationary_gain(sol, h, 4) != LFNS_STATUS_BUFFER_TOO_SMALL) return 3;
    if (lfns_last_error_message() == NULL) return 4;
    double gain[6 * 12];
    if (lfns_stationary_gain(sol, gain, 72) != LFNS_STATUS_OK) return 5;
    if (lfns_stationary_cost(sol, model, &cost) != LFNS_STATUS_OK) return 6;
    if (lfns_stationary_verdict(sol, model, &verdict) != LFNS_STATUS_OK) return 7;
    if (lfns_model_load(NULL, &model) != LFNS_STATUS_NULL_POINTER) return 8;
    printf("%.6f %.6f %.6f %d\n", gain[0], cost, verdict.spectral_radius, verdict.closed_loop_stable);
    lfns_stationary_free(sol);
    lfns_model_free(model);
    return 0;
}
