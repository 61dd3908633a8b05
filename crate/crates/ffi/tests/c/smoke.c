#include <math.h>
#include <stdio.h>
#include <string.h>

#include "onestream.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            const char *e = ost_last_error();                          \
            fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, e ? e : "no error"); \
            return 1;                                                  \
        }                                                              \
    } while (0)

static const char *CONFIG =
    "[model]\n"
    "n_template = 32\n"
    "n_search = 64\n"
    "feat_dim = 8\n"
    "heads = 2\n"
    "gcn_neighbors = 8\n"
    "mfa_samples = [16, 32]\n";

int main(void) {
    double a[7] = {0, 0, 0, 1, 1, 1, 0};
    double b[7] = {0.5, 0, 0, 1, 1, 1, 0};
    double iou = -1;
    CHECK(ost_box_iou(a, b, &iou) == OST_STATUS_OK);
    CHECK(fabs(iou - 1.0 / 3.0) < 1e-12);
    b[3] = -1;
    CHECK(ost_box_iou(a, b, &iou) == OST_STATUS_INVALID_ARGUMENT);
    CHECK(ost_last_error() != NULL);
    CHECK(ost_box_iou(a, NULL, &iou) == OST_STATUS_NULL_POINTER);

    OstModel *model = NULL;
    CHECK(ost_model_init(CONFIG, 3, &model) == OST_STATUS_OK);
    uint64_t params = 0;
    CHECK(ost_model_param_count(model, &params) == OST_STATUS_OK && params > 0);

    double first[7] = {0, 0, 0.75, 3.9, 1.6, 1.5, 0.2};
    double pts[3 * 64];
    for (int i = 0; i < 64; i++) {
        pts[3 * i] = 1.8 * ((i % 8) / 7.0 - 0.5);
        pts[3 * i + 1] = 0.7 * ((i / 8) / 7.0 - 0.5);
        pts[3 * i + 2] = 0.75;
    }
    OstTracker *tracker = NULL;
    CHECK(ost_tracker_new(model, pts, 64, first, &tracker) == OST_STATUS_OK);
    ost_model_free(model);
    double out[7];
    for (int t = 0; t < 3; t++) {
        CHECK(ost_tracker_update(tracker, pts, 64, out) == OST_STATUS_OK);
        CHECK(isfinite(out[0]) && out[3] == 3.9);
    }
    CHECK(ost_tracker_update(tracker, NULL, 0, out) == OST_STATUS_OK);
    ost_tracker_free(tracker);

    double g[14] = {0, 0, 0, 1, 1, 1, 0, 1, 0, 0, 1, 1, 1, 0};
    double s = 0, p = 0;
    CHECK(ost_evaluate(g, g, 2, &s, &p) == OST_STATUS_OK && s == 100.0 && p == 100.0);
    CHECK(ost_evaluate(g, g, 1, &s, &p) == OST_STATUS_INVALID_ARGUMENT);
    CHECK(ost_model_load("/nonexistent/model.json", &model) == OST_STATUS_IO);
    CHECK(strlen(ost_version()) > 0);
    printf("ok\n");
    return 0;
}
