#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "core.hpp"

namespace mvtv {

struct Fused1DProblem {
    std::vector<double> targets;
    std::vector<double> weights;  // nonnegative; zero-weight entries carry no data term
    double lam = 0.0;

    void validate() const {
        require(targets.size() == weights.size(), "fused1d: length mismatch");
        require(!targets.empty(), "fused1d: empty problem");
        require(lam >= 0.0, "fused1d: negative lambda");
        bool any_pos = false;
        for (std::size_t i = 0; i < targets.size(); ++i) {
            require(std::isfinite(weights[i]) && weights[i] >= 0.0, "fused1d: bad weight");
            if (weights[i] > 0.0) {
                any_pos = true;
                require(std::isfinite(targets[i]), "fused1d: non-finite target");
            }
        }
        require(any_pos, "fused1d: all weights zero");
    }
};

inline double fused1d_objective(const Fused1DProblem& p, const std::vector<double>& beta) {
    require(beta.size() == p.targets.size(), "fused1d_objective: length mismatch");
    double obj = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        const double d = p.targets[i] - beta[i];
        obj += 0.5 * p.weights[i] * d * d;
        if (i + 1 < beta.size()) obj += p.lam * std::abs(beta[i + 1] - beta[i]);
    }
    return obj;
}

namespace detail {

// Exact weighted 1d fused lasso for strictly positive weights: dynamic-programming
// message passing on the piecewise-linear derivative, clipped at +-lam (Johnson-style).
// Linear time; knots stored in a double-ended array.
inline void dp_fused_positive(const double* y, const double* w, std::size_t n, double lam,
                              double* beta) {
    if (n == 1 || lam == 0.0) {
        std::copy(y, y + n, beta);
        return;
    }
    std::vector<double> x(2 * n), a(2 * n), b(2 * n), tm(n - 1), tp(n - 1);

    tm[0] = -lam / w[0] + y[0];
    tp[0] = lam / w[0] + y[0];
    std::size_t l = n - 1, r = n;
    x[l] = tm[0];
    x[r] = tp[0];
    a[l] = w[0];
    b[l] = -w[0] * y[0] + lam;
    a[r] = -w[0];
    b[r] = w[0] * y[0] + lam;
    double afirst = w[1], bfirst = -w[1] * y[1] - lam;
    double alast = -w[1], blast = w[1] * y[1] - lam;

    for (std::size_t k = 1; k + 1 < n; ++k) {
        // scan up from the left until the derivative exceeds -lam
        double alo = afirst, blo = bfirst;
        std::size_t lo = l;
        while (lo <= r && alo * x[lo] + blo <= -lam) {
            alo += a[lo];
            blo += b[lo];
            ++lo;
        }
        tm[k] = (-lam - blo) / alo;
        l = lo - 1;
        x[l] = tm[k];

        // scan down from the right until the derivative drops below +lam
        double ahi = alast, bhi = blast;
        std::size_t hi = r;
        while (hi >= l && -ahi * x[hi] - bhi >= lam) {
            ahi += a[hi];
            bhi += b[hi];
            --hi;
        }
        tp[k] = (lam + bhi) / (-ahi);
        r = hi + 1;
        x[r] = tp[k];

        a[l] = alo;
        b[l] = blo + lam;
        a[r] = ahi;
        b[r] = bhi + lam;
        afirst = w[k + 1];
        bfirst = -w[k + 1] * y[k + 1] - lam;
        alast = -w[k + 1];
        blast = w[k + 1] * y[k + 1] - lam;
    }

    // minimize the final message: find the zero of its derivative
    double alo = afirst, blo = bfirst;
    std::size_t lo = l;
    while (lo <= r && alo * x[lo] + blo <= 0.0) {
        alo += a[lo];
        blo += b[lo];
        ++lo;
    }
    beta[n - 1] = -blo / alo;
    for (std::size_t k = n - 1; k-- > 0;)
        beta[k] = std::clamp(beta[k + 1], tm[k], tp[k]);
}

}  // namespace detail

// Exact minimizer of 1/2 sum_i w_i (y_i - b_i)^2 + lam * sum_i |b_{i+1} - b_i|.
// Zero-weight positions have no data term, so their value is dictated by the penalty
// alone: they fuse with the adjacent solved plateau (interior runs adopt the smaller
// of the two neighboring values, which keeps the rule symmetric under reversal).
inline std::vector<double> solve_fused1d(const Fused1DProblem& p) {
    p.validate();
    const std::size_t m = p.targets.size();
    std::vector<double> beta(m);

    std::vector<double> yc, wc;
    std::vector<std::size_t> idx;
    yc.reserve(m);
    wc.reserve(m);
    idx.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        if (p.weights[i] > 0.0) {
            yc.push_back(p.targets[i]);
            wc.push_back(p.weights[i]);
            idx.push_back(i);
        }
    }

    std::vector<double> bc(yc.size());
    detail::dp_fused_positive(yc.data(), wc.data(), yc.size(), p.lam, bc.data());

    for (std::size_t k = 0; k < idx.size(); ++k) beta[idx[k]] = bc[k];
    // fill the zero-weight runs between consecutive positive-weight positions
    for (std::size_t i = 0, k = 0; i < m; ++i) {
        if (p.weights[i] > 0.0) {
            ++k;
            continue;
        }
        const bool has_left = k > 0, has_right = k < idx.size();
        double v;
        if (has_left && has_right)
            v = std::min(bc[k - 1], bc[k]);
        else
            v = has_left ? bc[k - 1] : bc[k];
        beta[i] = v;
    }
    return beta;
}

}  // namespace mvtv
