#include <stdio.h>
#include <string.h>
#include "bgnn.h"

static const char *CONFIG =
    "seed = 2\n"
    "[model]\nentity_dim = 8\npredicate_dim = 8\nembed_dim = 4\nrce_hidden = 8\n"
    "[train]\nsteps = 5\nlog_every = 0\n"
    "[synth]\nn_images = 12\n";

int main(void) {
    if (bgnn_gate(0.25, 2.2, 0.025) < 0.4949 || bgnn_gate(0.25, 2.2, 0.025) > 0.4951) return 10;
    BgnnManifest *m = NULL;
    if (bgnn_manifest_synthesize(CONFIG, &m) != BGNN_STATUS_OK) return 11;
    if (bgnn_manifest_num_images(m) != 12) return 12;
    BgnnModel *model = NULL;
    if (bgnn_train(CONFIG, m, &model) != BGNN_STATUS_OK) return 13;
    BgnnReport *r = NULL;
    if (bgnn_evaluate(model, m, BGNN_MODE_PRED_CLS, 1, &r) != BGNN_STATUS_OK) return 14;
    double rec = -1, mrec = -1;
    if (bgnn_report_recall(r, 100, &rec, &mrec) != BGNN_STATUS_OK) return 15;
    if (rec < 0 || rec > 1 || mrec < 0 || mrec > 1) return 16;
    if (bgnn_report_recall(r, 7, NULL, NULL) != BGNN_STATUS_INVALID_INPUT) return 17;
    char msg[256];
    if (bgnn_last_error(msg, sizeof msg) == 0 || strstr(msg, "k=7") == NULL) return 18;
    BgnnManifest *bad = NULL;
    if (bgnn_manifest_load("/nonexistent/manifest.json", &bad) == BGNN_STATUS_OK || bad != NULL) return 19;
    bgnn_report_free(r);
    bgnn_model_free(model);
    bgnn_manifest_free(m);
    printf("ok %.4f %.4f\n", rec, mrec);
    return 0;
}
