#include <stdio.h>
#include "eagrs.h"
int main(void) {
    double m[9] = {1, .2, .3, .2, 1, .6, .3, .6, 1}, out[3];
    EagrsStatus s = eagrs_flatten_upper(m, 3, out, 3);
    double scores[4] = {.9, .4, .6, .1}; unsigned char labels[4] = {1, 1, 0, 0}; double auc;
    eagrs_roc_auc(scores, labels, 4, &auc);
    EagrsSae *h = NULL;
    EagrsStatus e = eagrs_sae_load("/nonexistent", &h);
    char buf[128]; eagrs_last_error_message(buf, sizeof buf);
    printf("%s %d %.1f %.1f %.1f auc=%.2f load=%d '%s'\n", eagrs_version(), s, out[0], out[1], out[2], auc, e, buf);
    return 0;
}
