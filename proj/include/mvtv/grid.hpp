#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "core.hpp"

namespace mvtv {

// A q-by-q target partition of (x1, x2) space. Axis k is cut at the interior
// breakpoints in breaks_k; after deduplication an axis may end up with fewer
// than q cells. Cells are left-closed/right-open, the last cell absorbs
// everything to the right, so the maximum coordinate always bins.
struct GridSpec {
    std::size_t q = 1;
    std::vector<double> breaks1;  // interior breakpoints for x1, strictly ascending
    std::vector<double> breaks2;  // interior breakpoints for x2, strictly ascending

    std::size_t cells1() const { return breaks1.size() + 1; }
    std::size_t cells2() const { return breaks2.size() + 1; }

    void validate() const {
        require(q >= 1, "GridSpec: q must be >= 1");
        require(breaks1.size() <= q - 1 && breaks2.size() <= q - 1,
                "GridSpec: more than q-1 breakpoints");
        for (const auto* breaks : {&breaks1, &breaks2}) {
            for (std::size_t i = 0; i < breaks->size(); ++i) {
                require(std::isfinite((*breaks)[i]), "GridSpec: non-finite breakpoint");
                require(i == 0 || (*breaks)[i - 1] < (*breaks)[i],
                        "GridSpec: breakpoints must be strictly ascending");
            }
        }
    }
};

// Index of the cell containing x: the number of breakpoints <= x.
inline std::size_t cell_index(const std::vector<double>& breaks, double x) {
    return static_cast<std::size_t>(
        std::upper_bound(breaks.begin(), breaks.end(), x) - breaks.begin());
}

// Interior empirical quantiles at levels k/q, k = 1..q-1. When k*n/q is an
// integer h the break is the midpoint (s[h-1]+s[h])/2, otherwise the order
// statistic s[ceil(k*n/q)-1]. Candidates that separate no data (<= the axis
// minimum, e.g. every candidate on a constant axis) are dropped, and the rest
// are deduplicated to a strictly ascending list.
inline std::vector<double> compute_breaks(const PointSet& points, std::size_t q, int axis) {
    require(q >= 1, "compute_breaks: q must be >= 1");
    require(axis == 1 || axis == 2, "compute_breaks: axis must be 1 or 2");
    points.validate();

    const std::size_t n = points.n();
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = axis == 1 ? points.records[i].x1 : points.records[i].x2;
    }
    std::sort(s.begin(), s.end());

    std::vector<double> breaks;
    for (std::size_t k = 1; k < q; ++k) {
        const std::size_t num = k * n;
        double candidate;
        if (num % q == 0) {
            const std::size_t h = num / q;
            candidate = h < n ? (s[h - 1] + s[h]) / 2.0 : s[n - 1];
        } else {
            const std::size_t h = num / q + 1;  // ceil(num/q), exact case excluded
            candidate = s[h - 1];
        }
        if (candidate <= s.front()) continue;
        if (breaks.empty() || candidate > breaks.back()) breaks.push_back(candidate);
    }
    return breaks;
}

inline GridSpec make_grid_spec(const PointSet& points, std::size_t q) {
    GridSpec spec;
    spec.q = q;
    spec.breaks1 = compute_breaks(points, q, 1);
    spec.breaks2 = compute_breaks(points, q, 2);
    spec.validate();
    return spec;
}

// Per-cell summaries of a PointSet under a GridSpec. Rows index x2 cells and
// columns index x1 cells. varsum holds the unbiased sample variance of the
// cell's responses (0 for cells with fewer than two points); the raw sum of
// squared deviations is recoverable as varsum * (eta - 1).
struct BinnedGrid {
    GridSpec spec;
    Grid eta;     // observation counts
    Grid ybar;    // cell means, 0 where eta == 0
    Grid varsum;  // unbiased sample variance per cell

    std::size_t rows() const { return eta.rows(); }
    std::size_t cols() const { return eta.cols(); }

    std::size_t total_count() const {
        double sum = 0.0;
        for (std::size_t i = 0; i < eta.size(); ++i) sum += eta[i];
        return static_cast<std::size_t>(sum + 0.5);
    }
};

inline BinnedGrid bin_points(const PointSet& points, const GridSpec& spec) {
    spec.validate();
    points.validate();

    const std::size_t rows = spec.cells2();
    const std::size_t cols = spec.cells1();
    BinnedGrid binned{spec, Grid(rows, cols), Grid(rows, cols), Grid(rows, cols)};

    // Welford accumulation: ybar holds running means, varsum running sums of
    // squared deviations until the final pass divides by eta - 1.
    for (const Point& p : points.records) {
        const std::size_t r = cell_index(spec.breaks2, p.x2);
        const std::size_t c = cell_index(spec.breaks1, p.x1);
        const double count = binned.eta(r, c) + 1.0;
        const double delta = p.y - binned.ybar(r, c);
        binned.eta(r, c) = count;
        binned.ybar(r, c) += delta / count;
        binned.varsum(r, c) += delta * (p.y - binned.ybar(r, c));
    }
    for (std::size_t i = 0; i < binned.varsum.size(); ++i) {
        binned.varsum[i] = binned.eta[i] > 1.5 ? binned.varsum[i] / (binned.eta[i] - 1.0) : 0.0;
    }
    return binned;
}

// Sum of unbiased per-cell response variances on the grid built at this q.
// Empty and singleton cells contribute zero.
inline double variance_score(const PointSet& points, std::size_t q) {
    const BinnedGrid binned = bin_points(points, make_grid_spec(points, q));
    double score = 0.0;
    for (std::size_t i = 0; i < binned.varsum.size(); ++i) score += binned.varsum[i];
    return score;
}

// Maximum-variance granularity selection over [q_min, q_max], ties broken
// toward the smallest q.
inline std::size_t select_q(const PointSet& points, std::size_t q_min, std::size_t q_max) {
    require(q_min >= 1 && q_min <= q_max, "select_q: need 1 <= q_min <= q_max");
    std::size_t best_q = q_min;
    double best_score = variance_score(points, q_min);
    for (std::size_t q = q_min + 1; q <= q_max; ++q) {
        const double score = variance_score(points, q);
        if (score > best_score) {
            best_score = score;
            best_q = q;
        }
    }
    return best_q;
}

}  // namespace mvtv
