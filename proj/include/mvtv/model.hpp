#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <utility>
#include <vector>

#include "core.hpp"
#include "grid.hpp"
#include "tv_solver.hpp"

namespace mvtv {

// A fitted piecewise-constant surface: per-cell values plus the plateau
// decomposition used for degrees of freedom. binned keeps the training
// summaries so residuals and exports need no second pass over the data.
struct FitResult {
    GridSpec spec;
    BinnedGrid binned;
    Grid beta;
    std::vector<int> plateau_labels;  // row-major, ids contiguous from 0
    std::size_t df = 0;
    double lam = 0.0;
    double rss = 0.0;
    std::size_t n = 0;
    bool converged = true;
};

// Connected components of the 4-neighbor grid graph restricted to edges whose
// endpoint values agree within rel_tol of the value scale (absolute floor near
// zero). Returns row-major labels and the component count.
inline std::pair<std::vector<int>, std::size_t> extract_plateaus(
    const Grid& beta, double rel_tol = detail::kPlateauRelTol) {
    require(rel_tol >= 0.0, "extract_plateaus: rel_tol must be >= 0");
    std::vector<int> labels;
    const double tol = detail::equality_tol(beta, rel_tol, detail::kPlateauAbsTol);
    const std::size_t count = detail::label_components(beta, tol, labels);
    return {std::move(labels), count};
}

// Residual sum of squares of the per-cell fit over the original points:
// sum over cells of eta*(ybar-beta)^2 plus the within-cell deviation mass.
inline double training_rss(const BinnedGrid& binned, const Grid& beta) {
    require(beta.rows() == binned.rows() && beta.cols() == binned.cols(),
            "training_rss: shape mismatch");
    double rss = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        const double eta = binned.eta[i];
        if (eta <= 0.0) continue;
        const double dev = binned.ybar[i] - beta[i];
        rss += eta * dev * dev + (eta - 1.0) * binned.varsum[i];
    }
    return rss;
}

inline FitResult fit_mvtv(const PointSet& points, std::size_t q, double lam,
                          double tol = 1e-8, std::size_t max_iter = 10000) {
    require(q >= 1, "fit_mvtv: q must be >= 1");
    require(std::isfinite(lam) && lam >= 0.0, "fit_mvtv: lam must be finite and >= 0");

    FitResult fit;
    fit.spec = make_grid_spec(points, q);
    fit.binned = bin_points(points, fit.spec);
    fit.lam = lam;
    fit.n = points.n();

    TVGridProblem problem{fit.binned.rows(), fit.binned.cols(), fit.binned.ybar,
                          fit.binned.eta, lam};
    TVSolution sol = solve_tv_grid(problem, tol, max_iter);
    fit.beta = std::move(sol.beta);
    fit.converged = sol.converged;

    auto [labels, count] = extract_plateaus(fit.beta, detail::kPlateauRelTol);
    fit.plateau_labels = std::move(labels);
    fit.df = count;
    fit.rss = training_rss(fit.binned, fit.beta);
    return fit;
}

// Value of the cell containing (x1, x2); coordinates beyond the training range
// fall into the outermost cells, which realizes boundary clamping.
inline double predict(const FitResult& fit, double x1, double x2) {
    require(std::isfinite(x1) && std::isfinite(x2), "predict: non-finite input");
    const std::size_t r = cell_index(fit.spec.breaks2, x2);
    const std::size_t c = cell_index(fit.spec.breaks1, x1);
    return fit.beta(r, c);
}

// Profile-Gaussian AIC with additive constants dropped: n*ln(rss/n) + 2*df.
// A perfect fit (rss = 0) maps to -infinity as a degenerate sentinel.
inline double aic_score(std::size_t n, double rss, std::size_t df) {
    require(n >= 1, "aic_score: n must be >= 1");
    require(rss >= 0.0, "aic_score: rss must be >= 0");
    if (rss <= 0.0) return -std::numeric_limits<double>::infinity();
    return static_cast<double>(n) * std::log(rss / static_cast<double>(n)) +
           2.0 * static_cast<double>(df);
}

inline double aic(const FitResult& fit) { return aic_score(fit.n, fit.rss, fit.df); }

}  // namespace mvtv
