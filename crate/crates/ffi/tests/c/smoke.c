#include <math.h>
#include <stdio.h>

#include "domo_lab.h"

int main(void) {
    DomoMdp *mdp = NULL;
    DomoPolicy *pi = NULL;
    DomoPolicy *mu = NULL;
    double v[6], out[6], eta = -1.0;
    char msg[128];

    if (domo_mdp_random(6, 2, 1.0, 0.9, 3, &mdp) != DOMO_STATUS_OK) return 1;
    if (domo_policy_uniform(6, 2, &pi) != DOMO_STATUS_OK) return 2;
    if (domo_policy_uniform(6, 2, &mu) != DOMO_STATUS_OK) return 3;

    /* On-policy, V^pi is the fixed point of every operator. */
    if (domo_exact_value(mdp, pi, v, 6) != DOMO_STATUS_OK) return 4;
    if (domo_apply_operator(mdp, pi, mu, DOMO_TRACE_KIND_V_TRACE, 1.0, v, 6, out, 6) != DOMO_STATUS_OK) return 5;
    for (int i = 0; i < 6; i++)
        if (fabs(out[i] - v[i]) > 1e-10) return 6;

    if (domo_contraction_rate(mdp, pi, mu, DOMO_TRACE_KIND_V_TRACE, 0.0, &eta) != DOMO_STATUS_OK) return 7;
    if (fabs(eta - 0.9) > 1e-12) return 8;

    if (domo_apply_operator(mdp, pi, mu, 42, 1.0, v, 6, out, 6) != DOMO_STATUS_INVALID_ARGUMENT) return 9;
    if (domo_last_error(msg, sizeof msg) == 0) return 10;

    domo_policy_free(mu);
    domo_policy_free(pi);
    domo_mdp_free(mdp);
    printf("ok %s\n", domo_version());
    return 0;
}
