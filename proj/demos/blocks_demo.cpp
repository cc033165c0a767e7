// End-to-end library walkthrough: sample a noisy 3x3-block surface, pick the
// grid granularity and penalty automatically, and print the fitted surface
// next to the truth on a coarse probe raster.

#include <cstdio>

#include <mvtv/datasets.hpp>
#include <mvtv/model.hpp>
#include <mvtv/selection.hpp>

int main() {
    const mvtv::PointSet points = mvtv::datasets::blocks_sample(2000, 0.5, 7);

    mvtv::CVReport report;
    const mvtv::FitResult fit = mvtv::auto_fit(points, {2, 100}, 5, 7, &report);

    std::printf("n = %zu points, selected q = %zu, lambda = %.4f\n", fit.n,
                report.selected_q, fit.lam);
    std::printf("plateaus (df) = %zu, rss = %.2f, aic = %.2f\n\n", fit.df, fit.rss,
                mvtv::aic(fit));

    const int probes = 12;
    std::printf("fitted surface at probe centers (rows = x2 descending):\n");
    for (int r = probes - 1; r >= 0; --r) {
        for (int c = 0; c < probes; ++c) {
            std::printf("%5.1f ", mvtv::predict(fit, (c + 0.5) / probes, (r + 0.5) / probes));
        }
        std::printf("\n");
    }

    std::printf("\ntruth at the same probes:\n");
    for (int r = probes - 1; r >= 0; --r) {
        for (int c = 0; c < probes; ++c) {
            std::printf("%5.1f ", mvtv::datasets::block_surface((c + 0.5) / probes,
                                                                (r + 0.5) / probes));
        }
        std::printf("\n");
    }
    return 0;
}
