#include <stdio.h>
#include <string.h>

#include "lsv_renewal.h"

int main(void) {
    char msg[256];
    LsvSystem *sys = NULL;
    if (lsv_system_new(-2.0, 0, 100, 16, &sys) != LSV_STATUS_INVALID_ARGUMENT || sys != NULL) {
        return 1;
    }
    if (lsv_last_error(msg, sizeof msg) == 0 || strlen(msg) == 0) {
        return 2;
    }
    if (lsv_system_new(1.5, 0, 200, 32, &sys) != LSV_STATUS_OK) {
        lsv_last_error(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 3;
    }
    double beta = 0.0, re = 0.0, im = 0.0;
    int regime = -1;
    if (lsv_system_info(sys, &beta, &regime) != LSV_STATUS_OK || regime != 1) {
        return 4;
    }
    if (lsv_rho_hat(sys, 2, 1, 16, 1.0, 0.0, &re, &im) != LSV_STATUS_OK) {
        return 5;
    }
    printf("%s beta=%.6f rho_hat(1)=%.12e%+.12ei\n", lsv_version(), beta, re, im);
    lsv_system_free(sys);
    return 0;
}
