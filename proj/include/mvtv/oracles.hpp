#pragma once

// Brute-force reference implementations used to certify the fast solvers.
// Everything here is deliberately slow, simple, and independent: objectives
// are re-coded from the definitions and no solver logic is reused.

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "core.hpp"
#include "fused1d.hpp"
#include "tv_solver.hpp"

namespace mvtv {

struct OracleBudget {
    std::size_t max_size = 6;         // largest grid edge / chain length accepted
    std::size_t iterations = 1000000;  // subgradient horizon
    double step_scale = 0.0;          // c in the c/sqrt(t) schedule; 0 = range(targets)
};

struct OracleResult1D {
    std::vector<double> beta;
    double objective = 0.0;
};

struct OracleGridResult {
    Grid beta;
    double objective = 0.0;
};

inline double oracle_fused1d_objective(const Fused1DProblem& p,
                                       const std::vector<double>& beta) {
    require(beta.size() == p.targets.size(), "oracle_fused1d_objective: length mismatch");
    double obj = 0.0;
    for (std::size_t i = 0; i < beta.size(); ++i) {
        const double dev = p.targets[i] - beta[i];
        obj += 0.5 * p.weights[i] * dev * dev;
        if (i > 0) obj += p.lam * std::abs(beta[i] - beta[i - 1]);
    }
    return obj;
}

inline double oracle_tv_objective(const TVGridProblem& p, const Grid& beta) {
    require(beta.rows() == p.rows && beta.cols() == p.cols,
            "oracle_tv_objective: shape mismatch");
    double obj = 0.0;
    for (std::size_t r = 0; r < p.rows; ++r) {
        for (std::size_t c = 0; c < p.cols; ++c) {
            const double dev = p.targets(r, c) - beta(r, c);
            obj += 0.5 * p.weights(r, c) * dev * dev;
            if (r + 1 < p.rows) obj += p.lam * std::abs(beta(r, c) - beta(r + 1, c));
            if (c + 1 < p.cols) obj += p.lam * std::abs(beta(r, c) - beta(r, c + 1));
        }
    }
    return obj;
}

// Group-fused objective over adjacent whole rows and columns (the CRISP
// penalty): ½ Σ w(y−M)² + λ Σ_r ‖M_r· − M_(r+1)·‖₂ + λ Σ_c ‖M_·c − M_·(c+1)‖₂.
inline double oracle_crisp_objective(const Grid& targets, const Grid& weights, double lam,
                                     const Grid& m) {
    require(m.same_shape(targets) && m.same_shape(weights),
            "oracle_crisp_objective: shape mismatch");
    double obj = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double dev = targets[i] - m[i];
        obj += 0.5 * weights[i] * dev * dev;
    }
    for (std::size_t r = 0; r + 1 < m.rows(); ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double d = m(r, c) - m(r + 1, c);
            ss += d * d;
        }
        obj += lam * std::sqrt(ss);
    }
    for (std::size_t c = 0; c + 1 < m.cols(); ++c) {
        double ss = 0.0;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            const double d = m(r, c) - m(r, c + 1);
            ss += d * d;
        }
        obj += lam * std::sqrt(ss);
    }
    return obj;
}

// Exact 1D solution by exhaustive enumeration: every fusion pattern of
// adjacent positions, crossed with every sign vector for the inter-plateau
// differences, solved in closed form from the stationarity conditions and
// filtered for sign consistency. The fully-fused candidate is always feasible,
// so a minimizer always exists among the candidates.
inline OracleResult1D oracle_fused1d_exact(const Fused1DProblem& p,
                                           std::size_t max_size = 8) {
    p.validate();
    const std::size_t m = p.targets.size();
    require(m <= max_size, "oracle_fused1d_exact: instance too large");

    OracleResult1D best;
    best.objective = std::numeric_limits<double>::infinity();
    std::vector<double> beta(m);

    for (std::size_t mask = 0; mask < (std::size_t{1} << (m - 1)); ++mask) {
        // Plateau j spans positions [start[j], start[j+1]).
        std::vector<std::size_t> start{0};
        for (std::size_t i = 0; i + 1 < m; ++i) {
            if (!(mask & (std::size_t{1} << i))) start.push_back(i + 1);
        }
        start.push_back(m);
        const std::size_t np = start.size() - 1;

        std::vector<double> wsum(np, 0.0), wy(np, 0.0);
        for (std::size_t j = 0; j < np; ++j) {
            for (std::size_t i = start[j]; i < start[j + 1]; ++i) {
                wsum[j] += p.weights[i];
                wy[j] += p.weights[i] * p.targets[i];
            }
        }

        std::vector<double> value(np);
        std::vector<bool> known(np);
        std::vector<int> sign(np > 0 ? np - 1 : 0);
        for (std::size_t code = 0; code < (std::size_t{1} << (np - 1)); ++code) {
            for (std::size_t j = 0; j + 1 < np; ++j) {
                sign[j] = (code & (std::size_t{1} << j)) ? 1 : -1;
            }
            bool feasible = true;
            for (std::size_t j = 0; j < np && feasible; ++j) {
                const int s_right = j + 1 < np ? sign[j] : 0;
                const int s_left = j > 0 ? sign[j - 1] : 0;
                if (wsum[j] > 0.0) {
                    value[j] = (wy[j] + p.lam * (s_right - s_left)) / wsum[j];
                    known[j] = true;
                } else if (s_right != s_left) {
                    // A dataless plateau is stationary only when the two
                    // boundary signs cancel.
                    feasible = false;
                } else {
                    known[j] = false;
                }
            }
            if (!feasible) continue;

            // Dataless plateau runs sit strictly between their known
            // neighbors; spacing is arbitrary, so place them evenly.
            for (std::size_t j = 0; j < np && feasible; ++j) {
                if (known[j]) continue;
                std::size_t end = j;
                while (end + 1 < np && !known[end + 1]) ++end;
                const double lo = value[j - 1], hi = value[end + 1];
                const int dir = sign[j - 1];
                if ((hi > lo ? 1 : hi < lo ? -1 : 0) != dir) {
                    feasible = false;
                    break;
                }
                const double step = (hi - lo) / static_cast<double>(end - j + 2);
                for (std::size_t t = j; t <= end; ++t) {
                    value[t] = lo + step * static_cast<double>(t - j + 1);
                    known[t] = true;
                }
                j = end;
            }
            if (!feasible) continue;

            for (std::size_t j = 0; j + 1 < np; ++j) {
                const double diff = value[j + 1] - value[j];
                if ((diff > 0.0 ? 1 : diff < 0.0 ? -1 : 0) != sign[j]) {
                    feasible = false;
                    break;
                }
            }
            if (!feasible) continue;

            for (std::size_t j = 0; j < np; ++j) {
                for (std::size_t i = start[j]; i < start[j + 1]; ++i) beta[i] = value[j];
            }
            const double obj = oracle_fused1d_objective(p, beta);
            if (obj < best.objective) {
                best.objective = obj;
                best.beta = beta;
            }
        }
    }
    return best;
}

// Projected subgradient descent on the grid TV objective with diminishing
// steps c/sqrt(t) and best-iterate tracking. Slow but assumption-free.
inline OracleGridResult oracle_tv_subgradient(const TVGridProblem& p,
                                              const OracleBudget& budget = {}) {
    p.validate();
    require(p.rows <= budget.max_size && p.cols <= budget.max_size,
            "oracle_tv_subgradient: instance too large");

    const std::size_t R = p.rows, C = p.cols;
    double wsum = 0.0, wy = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < p.weights.size(); ++i) {
        if (p.weights[i] <= 0.0) continue;
        wsum += p.weights[i];
        wy += p.weights[i] * p.targets[i];
        lo = std::min(lo, p.targets[i]);
        hi = std::max(hi, p.targets[i]);
    }
    const double c = budget.step_scale > 0.0 ? budget.step_scale : hi - lo;

    OracleGridResult best;
    Grid beta(R, C, wy / wsum);
    best.beta = beta;
    best.objective = oracle_tv_objective(p, beta);
    if (c <= 0.0) return best;

    Grid grad(R, C);
    for (std::size_t t = 1; t <= budget.iterations; ++t) {
        double obj = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t col = 0; col < C; ++col) {
                const double dev = beta(r, col) - p.targets(r, col);
                grad(r, col) = p.weights(r, col) * dev;
                obj += 0.5 * p.weights(r, col) * dev * dev;
            }
        }
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t col = 0; col < C; ++col) {
                if (r + 1 < R) {
                    const double d = beta(r, col) - beta(r + 1, col);
                    const double s = d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0;
                    grad(r, col) += p.lam * s;
                    grad(r + 1, col) -= p.lam * s;
                    obj += p.lam * std::abs(d);
                }
                if (col + 1 < C) {
                    const double d = beta(r, col) - beta(r, col + 1);
                    const double s = d > 0.0 ? 1.0 : d < 0.0 ? -1.0 : 0.0;
                    grad(r, col) += p.lam * s;
                    grad(r, col + 1) -= p.lam * s;
                    obj += p.lam * std::abs(d);
                }
            }
        }
        if (obj < best.objective) {
            best.objective = obj;
            best.beta = beta;
        }
        const double step = c / std::sqrt(static_cast<double>(t));
        for (std::size_t i = 0; i < beta.size(); ++i) beta[i] -= step * grad[i];
    }
    const double final_obj = oracle_tv_objective(p, beta);
    if (final_obj < best.objective) {
        best.objective = final_obj;
        best.beta = beta;
    }
    return best;
}

// Subgradient reference for the CRISP group-fused objective. The subgradient
// of each ‖d‖₂ term is d/‖d‖₂ where nonzero and 0 at the origin.
inline OracleGridResult oracle_crisp_subgradient(const Grid& targets, const Grid& weights,
                                                 double lam,
                                                 const OracleBudget& budget = {}) {
    require(targets.same_shape(weights), "oracle_crisp_subgradient: shape mismatch");
    require(targets.rows() <= budget.max_size && targets.cols() <= budget.max_size,
            "oracle_crisp_subgradient: instance too large");
    require(lam >= 0.0, "oracle_crisp_subgradient: lam must be >= 0");

    const std::size_t R = targets.rows(), C = targets.cols();
    double wsum = 0.0, wy = 0.0;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        require(weights[i] >= 0.0, "oracle_crisp_subgradient: negative weight");
        if (weights[i] <= 0.0) continue;
        require(std::isfinite(targets[i]), "oracle_crisp_subgradient: non-finite target");
        wsum += weights[i];
        wy += weights[i] * targets[i];
        lo = std::min(lo, targets[i]);
        hi = std::max(hi, targets[i]);
    }
    require(wsum > 0.0, "oracle_crisp_subgradient: need a positive weight");
    const double c = budget.step_scale > 0.0 ? budget.step_scale : hi - lo;

    OracleGridResult best;
    Grid m(R, C, wy / wsum);
    best.beta = m;
    best.objective = oracle_crisp_objective(targets, weights, lam, m);
    if (c <= 0.0) return best;

    Grid grad(R, C);
    std::vector<double> diff(std::max(R, C));
    for (std::size_t t = 1; t <= budget.iterations; ++t) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            grad[i] = weights[i] * (m[i] - targets[i]);
        }
        for (std::size_t r = 0; r + 1 < R; ++r) {
            double ss = 0.0;
            for (std::size_t col = 0; col < C; ++col) {
                diff[col] = m(r, col) - m(r + 1, col);
                ss += diff[col] * diff[col];
            }
            const double norm = std::sqrt(ss);
            if (norm <= 0.0) continue;
            for (std::size_t col = 0; col < C; ++col) {
                const double g = lam * diff[col] / norm;
                grad(r, col) += g;
                grad(r + 1, col) -= g;
            }
        }
        for (std::size_t col = 0; col + 1 < C; ++col) {
            double ss = 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                diff[r] = m(r, col) - m(r, col + 1);
                ss += diff[r] * diff[r];
            }
            const double norm = std::sqrt(ss);
            if (norm <= 0.0) continue;
            for (std::size_t r = 0; r < R; ++r) {
                const double g = lam * diff[r] / norm;
                grad(r, col) += g;
                grad(r, col + 1) -= g;
            }
        }
        const double step = c / std::sqrt(static_cast<double>(t));
        for (std::size_t i = 0; i < m.size(); ++i) m[i] -= step * grad[i];
        const double obj = oracle_crisp_objective(targets, weights, lam, m);
        if (obj < best.objective) {
            best.objective = obj;
            best.beta = m;
        }
    }
    return best;
}

}  // namespace mvtv
