#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "core.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "tv_solver.hpp"

namespace mvtv {

// Geometric path of penalty levels, descending from a lam_max at which the fit
// is fully fused (df = 1). Degenerate data collapses the path to a single 0.
struct LambdaPath {
    std::vector<double> values;
    double lam_max = 0.0;
    std::size_t num_points = 0;
    double decay = 1.0;
};

struct CVReport {
    std::vector<double> lambda;       // path values, descending
    std::vector<double> mean_rmse;    // mean out-of-fold RMSE per lambda
    std::vector<double> stderr_rmse;  // standard error of the fold RMSEs
    std::size_t folds = 0;
    double selected_lambda = 0.0;
    std::size_t selected_q = 0;
};

namespace detail {

inline std::size_t df_at(const BinnedGrid& binned, double lam) {
    TVGridProblem problem{binned.rows(), binned.cols(), binned.ybar, binned.eta, lam};
    const TVSolution sol = solve_tv_grid(problem);
    return extract_plateaus(sol.beta, kPlateauRelTol).second;
}

}  // namespace detail

inline LambdaPath lambda_path(const PointSet& points, std::size_t q,
                              std::size_t num_points = 50, double span = 1e4) {
    require(num_points >= 2, "lambda_path: num_points must be >= 2");
    require(span > 1.0, "lambda_path: span must be > 1");

    const BinnedGrid binned = bin_points(points, make_grid_spec(points, q));
    double mass = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < binned.eta.size(); ++i) {
        mass += binned.eta[i];
        mean += binned.eta[i] * binned.ybar[i];
    }
    mean /= mass;
    double fuse = 0.0;  // upper bound on the fusion level, Σ η|ȳ−μ|
    for (std::size_t i = 0; i < binned.eta.size(); ++i) {
        fuse += binned.eta[i] * std::abs(binned.ybar[i] - mean);
    }
    if (fuse <= 0.0) return {{0.0}, 0.0, 1, 1.0};

    // Doubling search for a fully-fused level, then a short geometric
    // bisection to tighten it; hi always satisfies df(hi) = 1.
    double lam = fuse / 256.0;
    while (detail::df_at(binned, lam) > 1 && lam < fuse) lam *= 2.0;
    double lo = lam / 2.0, hi = lam;
    for (int iter = 0; iter < 6; ++iter) {
        const double mid = std::sqrt(lo * hi);
        if (detail::df_at(binned, mid) > 1) {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    LambdaPath path;
    path.lam_max = hi;
    path.num_points = num_points;
    path.decay = std::pow(span, -1.0 / static_cast<double>(num_points - 1));
    path.values.resize(num_points);
    double value = hi;
    for (std::size_t i = 0; i < num_points; ++i) {
        path.values[i] = value;
        value *= path.decay;
    }
    return path;
}

// K-fold cross-validation of the penalty level on a fixed grid. Breaks come
// from the full dataset; each fold refit only changes the cell counts and
// means. Ties select the larger lambda (more smoothing).
inline CVReport kfold_cv(const PointSet& points, std::size_t q, const LambdaPath& path,
                         std::size_t k, std::uint64_t seed) {
    points.validate();
    require(k >= 2, "kfold_cv: k must be >= 2");
    require(k <= points.n(), "kfold_cv: k must not exceed n");
    require(!path.values.empty(), "kfold_cv: empty path");

    const std::size_t n = points.n();
    const std::size_t L = path.values.size();
    const GridSpec spec = make_grid_spec(points, q);

    std::vector<std::size_t> fold_of(n);
    {
        Rng rng(seed);
        const std::vector<std::size_t> order = rng.permutation(n);
        for (std::size_t j = 0; j < n; ++j) fold_of[order[j]] = j % k;
    }

    // fold_rmse[f*L + l] = held-out RMSE of fold f at path value l.
    std::vector<double> fold_rmse(k * L, 0.0);
    for (std::size_t f = 0; f < k; ++f) {
        PointSet train;
        std::vector<const Point*> held;
        for (std::size_t i = 0; i < n; ++i) {
            if (fold_of[i] == f) {
                held.push_back(&points.records[i]);
            } else {
                train.records.push_back(points.records[i]);
            }
        }
        const BinnedGrid binned = bin_points(train, spec);
        for (std::size_t l = 0; l < L; ++l) {
            TVGridProblem problem{binned.rows(), binned.cols(), binned.ybar, binned.eta,
                                  path.values[l]};
            const TVSolution sol = solve_tv_grid(problem);
            double sse = 0.0;
            for (const Point* p : held) {
                const double pred = sol.beta(cell_index(spec.breaks2, p->x2),
                                             cell_index(spec.breaks1, p->x1));
                sse += (p->y - pred) * (p->y - pred);
            }
            fold_rmse[f * L + l] = std::sqrt(sse / static_cast<double>(held.size()));
        }
    }

    CVReport report;
    report.lambda = path.values;
    report.folds = k;
    report.selected_q = q;
    report.mean_rmse.resize(L);
    report.stderr_rmse.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
        double mean = 0.0;
        for (std::size_t f = 0; f < k; ++f) mean += fold_rmse[f * L + l];
        mean /= static_cast<double>(k);
        double ss = 0.0;
        for (std::size_t f = 0; f < k; ++f) {
            const double d = fold_rmse[f * L + l] - mean;
            ss += d * d;
        }
        report.mean_rmse[l] = mean;
        report.stderr_rmse[l] = k > 1 ? std::sqrt(ss / static_cast<double>(k - 1)) /
                                            std::sqrt(static_cast<double>(k))
                                      : 0.0;
    }

    // Path is descending, so keeping the first strict minimum favors larger
    // lambda among ties.
    std::size_t best = 0;
    for (std::size_t l = 1; l < L; ++l) {
        if (report.mean_rmse[l] < report.mean_rmse[best]) best = l;
    }
    report.selected_lambda = path.values[best];
    return report;
}

// Pipelined hyperparameter selection: q first by maximum variance, then lambda
// by CV at that q. Degenerate (constant-response) data skips CV entirely.
inline FitResult auto_fit(const PointSet& points, std::pair<std::size_t, std::size_t> q_range,
                          std::size_t cv_folds = 5, std::uint64_t seed = 0,
                          CVReport* report = nullptr) {
    require(cv_folds >= 2, "auto_fit: cv_folds must be >= 2");
    const std::size_t q = select_q(points, q_range.first, q_range.second);
    const LambdaPath path = lambda_path(points, q);

    double lam;
    if (path.values.size() == 1) {
        lam = path.values.front();
        if (report) {
            *report = CVReport{{lam}, {0.0}, {0.0}, cv_folds, lam, q};
        }
    } else {
        CVReport cv = kfold_cv(points, q, path, cv_folds, seed);
        lam = cv.selected_lambda;
        if (report) *report = std::move(cv);
    }
    return fit_mvtv(points, q, lam);
}

}  // namespace mvtv
