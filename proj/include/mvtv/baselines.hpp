#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include "core.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace mvtv {

// ---------------------------------------------------------------------------
// CRISP: group-fused penalty on adjacent whole rows and columns of the cell
// matrix, solved by ADMM with one slack vector per adjacent row pair and per
// adjacent column pair.
// ---------------------------------------------------------------------------

struct CrispProblem {
    std::size_t q = 2;
    BinnedGrid binned;
    double lam = 0.0;
    double rho = 1.0;

    void validate() const {
        require(q >= 2, "CrispProblem: q must be >= 2");
        require(rho > 0.0, "CrispProblem: rho must be > 0");
        require(std::isfinite(lam) && lam >= 0.0, "CrispProblem: lam must be >= 0");
    }
};

struct CrispSolution {
    Grid m;
    std::size_t iterations = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    bool converged = true;
};

inline double crisp_objective(const Grid& ybar, const Grid& eta, double lam, const Grid& m) {
    require(m.same_shape(ybar) && m.same_shape(eta), "crisp_objective: shape mismatch");
    double obj = 0.0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double dev = ybar[i] - m[i];
        obj += 0.5 * eta[i] * dev * dev;
    }
    const std::size_t R = m.rows(), C = m.cols();
    for (std::size_t r = 0; r + 1 < R; ++r) {
        double ss = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
            const double d = m(r, c) - m(r + 1, c);
            ss += d * d;
        }
        obj += lam * std::sqrt(ss);
    }
    for (std::size_t c = 0; c + 1 < C; ++c) {
        double ss = 0.0;
        for (std::size_t r = 0; r < R; ++r) {
            const double d = m(r, c) - m(r, c + 1);
            ss += d * d;
        }
        obj += lam * std::sqrt(ss);
    }
    return obj;
}

namespace detail {

// Cell means with empty cells filled from the nearest nonempty cell in the
// same row (ties toward the smaller column), then the same column, then the
// global weighted mean. Only used for the degenerate lam = 0 report.
inline Grid crisp_lambda0_fill(const Grid& ybar, const Grid& eta) {
    const std::size_t R = ybar.rows(), C = ybar.cols();
    double wsum = 0.0, wy = 0.0;
    for (std::size_t i = 0; i < eta.size(); ++i) {
        wsum += eta[i];
        wy += eta[i] * ybar[i];
    }
    const double global = wy / wsum;

    Grid m(R, C, global);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            if (eta(r, c) > 0.0) {
                m(r, c) = ybar(r, c);
                continue;
            }
            std::size_t best_dist = R + C + 1;
            double value = global;
            for (std::size_t cc = 0; cc < C; ++cc) {
                if (eta(r, cc) <= 0.0) continue;
                const std::size_t dist = cc > c ? cc - c : c - cc;
                if (dist < best_dist) {
                    best_dist = dist;
                    value = ybar(r, cc);
                }
            }
            if (best_dist > R + C) {
                for (std::size_t rr = 0; rr < R; ++rr) {
                    if (eta(rr, c) <= 0.0) continue;
                    const std::size_t dist = rr > r ? rr - r : r - rr;
                    if (dist < best_dist) {
                        best_dist = dist;
                        value = ybar(rr, c);
                    }
                }
            }
            m(r, c) = value;
        }
    }
    return m;
}

// Matrix-free application of diag(eta) + rho * (4-neighbor grid Laplacian).
inline void crisp_apply(const Grid& eta, double rho, const Grid& x, Grid& out) {
    const std::size_t R = x.rows(), C = x.cols();
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            double acc = eta(r, c) * x(r, c);
            double lap = 0.0;
            if (r > 0) lap += x(r, c) - x(r - 1, c);
            if (r + 1 < R) lap += x(r, c) - x(r + 1, c);
            if (c > 0) lap += x(r, c) - x(r, c - 1);
            if (c + 1 < C) lap += x(r, c) - x(r, c + 1);
            out(r, c) = acc + rho * lap;
        }
    }
}

// Diagonally preconditioned conjugate gradient for the CRISP M-update; x is
// used as the warm start and receives the solution.
inline void crisp_cg(const Grid& eta, double rho, const Grid& rhs, Grid& x) {
    const std::size_t N = rhs.size();
    Grid r(rhs.rows(), rhs.cols()), z(rhs.rows(), rhs.cols());
    Grid p(rhs.rows(), rhs.cols()), ap(rhs.rows(), rhs.cols());

    std::vector<double> inv_diag(N);
    for (std::size_t rr = 0; rr < rhs.rows(); ++rr) {
        for (std::size_t cc = 0; cc < rhs.cols(); ++cc) {
            double deg = 0.0;
            if (rr > 0) deg += 1.0;
            if (rr + 1 < rhs.rows()) deg += 1.0;
            if (cc > 0) deg += 1.0;
            if (cc + 1 < rhs.cols()) deg += 1.0;
            inv_diag[rr * rhs.cols() + cc] = 1.0 / (eta(rr, cc) + rho * deg + 1e-300);
        }
    }

    crisp_apply(eta, rho, x, ap);
    double rhs_norm = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        r[i] = rhs[i] - ap[i];
        rhs_norm += rhs[i] * rhs[i];
    }
    const double tol2 = std::max(1e-300, 1e-24 * rhs_norm);

    double rz = 0.0;
    for (std::size_t i = 0; i < N; ++i) {
        z[i] = inv_diag[i] * r[i];
        p[i] = z[i];
        rz += r[i] * z[i];
    }
    const std::size_t max_cg = 4 * N + 50;
    for (std::size_t it = 0; it < max_cg; ++it) {
        double rr_norm = 0.0;
        for (std::size_t i = 0; i < N; ++i) rr_norm += r[i] * r[i];
        if (rr_norm <= tol2) break;

        crisp_apply(eta, rho, p, ap);
        double pap = 0.0;
        for (std::size_t i = 0; i < N; ++i) pap += p[i] * ap[i];
        if (pap <= 0.0) break;
        const double alpha = rz / pap;
        for (std::size_t i = 0; i < N; ++i) {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        double rz_new = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            z[i] = inv_diag[i] * r[i];
            rz_new += r[i] * z[i];
        }
        const double beta = rz_new / rz;
        rz = rz_new;
        for (std::size_t i = 0; i < N; ++i) p[i] = z[i] + beta * p[i];
    }
}

}  // namespace detail

// ADMM on the binned CRISP objective. Row slacks approximate the R-1 adjacent
// row differences, column slacks the C-1 adjacent column differences; both get
// group soft-threshold updates. The M-update solves a strictly positive
// definite linear system by warm-started CG.
inline CrispSolution solve_crisp_grid(const Grid& ybar, const Grid& eta, double lam,
                                      double rho = 1.0, double tol = 1e-8,
                                      std::size_t max_iter = 10000) {
    require(ybar.same_shape(eta), "solve_crisp_grid: shape mismatch");
    require(std::isfinite(lam) && lam >= 0.0, "solve_crisp_grid: lam must be >= 0");
    require(rho > 0.0, "solve_crisp_grid: rho must be > 0");
    require(tol > 0.0 && max_iter >= 1, "solve_crisp_grid: bad tolerance settings");

    const std::size_t R = ybar.rows(), C = ybar.cols();
    double wsum = 0.0, wy = 0.0;
    for (std::size_t i = 0; i < eta.size(); ++i) {
        require(eta[i] >= 0.0, "solve_crisp_grid: negative weight");
        if (eta[i] > 0.0) {
            require(std::isfinite(ybar[i]), "solve_crisp_grid: non-finite target");
            wsum += eta[i];
            wy += eta[i] * ybar[i];
        }
    }
    require(wsum > 0.0, "solve_crisp_grid: need at least one positive weight");
    const double mean = wy / wsum;

    if (lam <= 0.0) {
        return {detail::crisp_lambda0_fill(ybar, eta), 0, 0.0, 0.0, true};
    }
    // Certified fully-fused shortcut: a TV certificate for the constant fit
    // scaled by sqrt(max(R, C)) bounds every group dual norm by 1.
    double fuse = 0.0;
    for (std::size_t i = 0; i < eta.size(); ++i) fuse += eta[i] * std::abs(ybar[i] - mean);
    if (lam >= std::sqrt(static_cast<double>(std::max(R, C))) * fuse) {
        return {Grid(R, C, mean), 0, 0.0, 0.0, true};
    }

    Grid m(R, C, mean), rhs(R, C);
    const std::size_t ra = R > 1 ? R - 1 : 0, ca = C > 1 ? C - 1 : 0;
    Grid slack_r(std::max<std::size_t>(ra, 1), C, 0.0), dual_r = slack_r;
    Grid slack_c(R, std::max<std::size_t>(ca, 1), 0.0), dual_c = slack_c;
    Grid prev_slack_r = slack_r, prev_slack_c = slack_c;

    CrispSolution out;
    Grid best_m = m;
    double best_obj = crisp_objective(ybar, eta, lam, m);
    out.converged = false;

    for (std::size_t iter = 1; iter <= max_iter; ++iter) {
        // M-update rhs: eta*ybar + rho*(Dr^T(slack_r - dual_r) + Dc^T(slack_c - dual_c)).
        for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] = eta[i] * ybar[i];
        for (std::size_t r = 0; r < ra; ++r) {
            for (std::size_t c = 0; c < C; ++c) {
                const double z = slack_r(r, c) - dual_r(r, c);
                rhs(r, c) += rho * z;
                rhs(r + 1, c) -= rho * z;
            }
        }
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t c = 0; c < ca; ++c) {
                const double z = slack_c(r, c) - dual_c(r, c);
                rhs(r, c) += rho * z;
                rhs(r, c + 1) -= rho * z;
            }
        }
        detail::crisp_cg(eta, rho, rhs, m);

        prev_slack_r = slack_r;
        prev_slack_c = slack_c;
        const double shrink = lam / rho;
        double prim2 = 0.0, dm2 = 0.0, slack2 = 0.0;
        for (std::size_t r = 0; r < ra; ++r) {
            double norm2 = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                const double v = m(r, c) - m(r + 1, c) + dual_r(r, c);
                slack_r(r, c) = v;
                norm2 += v * v;
            }
            const double norm = std::sqrt(norm2);
            const double scale = norm > shrink ? 1.0 - shrink / norm : 0.0;
            for (std::size_t c = 0; c < C; ++c) {
                slack_r(r, c) *= scale;
                const double diff = m(r, c) - m(r + 1, c);
                const double resid = diff - slack_r(r, c);
                dual_r(r, c) += resid;
                prim2 += resid * resid;
                dm2 += diff * diff;
                slack2 += slack_r(r, c) * slack_r(r, c);
            }
        }
        for (std::size_t c = 0; c < ca; ++c) {
            double norm2 = 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                const double v = m(r, c) - m(r, c + 1) + dual_c(r, c);
                slack_c(r, c) = v;
                norm2 += v * v;
            }
            const double norm = std::sqrt(norm2);
            const double scale = norm > shrink ? 1.0 - shrink / norm : 0.0;
            for (std::size_t r = 0; r < R; ++r) {
                slack_c(r, c) *= scale;
                const double diff = m(r, c) - m(r, c + 1);
                const double resid = diff - slack_c(r, c);
                dual_c(r, c) += resid;
                prim2 += resid * resid;
                dm2 += diff * diff;
                slack2 += slack_c(r, c) * slack_c(r, c);
            }
        }

        // Dual residual: rho * || Dr^T dSlack_r + Dc^T dSlack_c ||.
        double dual2 = 0.0, dualscale2 = 0.0;
        {
            Grid back(R, C, 0.0), scaleback(R, C, 0.0);
            for (std::size_t r = 0; r < ra; ++r) {
                for (std::size_t c = 0; c < C; ++c) {
                    const double dz = slack_r(r, c) - prev_slack_r(r, c);
                    back(r, c) += dz;
                    back(r + 1, c) -= dz;
                    scaleback(r, c) += dual_r(r, c);
                    scaleback(r + 1, c) -= dual_r(r, c);
                }
            }
            for (std::size_t r = 0; r < R; ++r) {
                for (std::size_t c = 0; c < ca; ++c) {
                    const double dz = slack_c(r, c) - prev_slack_c(r, c);
                    back(r, c) += dz;
                    back(r, c + 1) -= dz;
                    scaleback(r, c) += dual_c(r, c);
                    scaleback(r, c + 1) -= dual_c(r, c);
                }
            }
            for (std::size_t i = 0; i < back.size(); ++i) {
                dual2 += back[i] * back[i];
                dualscale2 += scaleback[i] * scaleback[i];
            }
        }

        const double prim = std::sqrt(prim2);
        const double dual = rho * std::sqrt(dual2);
        const double prim_scale = std::max({std::sqrt(dm2), std::sqrt(slack2), 1e-12});
        const double dual_scale = std::max(rho * std::sqrt(dualscale2), 1e-12);
        out.iterations = iter;
        out.primal_residual = prim;
        out.dual_residual = dual;

        const double obj = crisp_objective(ybar, eta, lam, m);
        if (obj < best_obj) {
            best_obj = obj;
            best_m = m;
        }
        if (prim <= tol * prim_scale && dual <= tol * dual_scale) {
            out.converged = true;
            break;
        }
        // Residual balancing keeps the two residuals within two orders of
        // magnitude; duals are rescaled to preserve the scaled formulation.
        if (iter % 50 == 0) {
            if (prim > 100.0 * dual) {
                rho *= 2.0;
                for (std::size_t i = 0; i < dual_r.size(); ++i) dual_r[i] *= 0.5;
                for (std::size_t i = 0; i < dual_c.size(); ++i) dual_c[i] *= 0.5;
            } else if (dual > 100.0 * prim) {
                rho *= 0.5;
                for (std::size_t i = 0; i < dual_r.size(); ++i) dual_r[i] *= 2.0;
                for (std::size_t i = 0; i < dual_c.size(); ++i) dual_c[i] *= 2.0;
            }
        }
    }

    out.m = out.converged ? std::move(m) : std::move(best_m);
    return out;
}

// CRISP df: adjacent rows (columns) fuse when every entry agrees within the
// plateau tolerance; cells are labeled by their (row-group, column-group)
// block and df is the block count.
inline std::pair<std::vector<int>, std::size_t> crisp_blocks(const Grid& m) {
    const std::size_t R = m.rows(), C = m.cols();
    const double tol = detail::equality_tol(m, detail::kPlateauRelTol, detail::kPlateauAbsTol);

    std::vector<std::size_t> row_group(R, 0), col_group(C, 0);
    std::size_t rg = 0;
    for (std::size_t r = 1; r < R; ++r) {
        bool fused = true;
        for (std::size_t c = 0; c < C && fused; ++c) {
            fused = std::abs(m(r, c) - m(r - 1, c)) <= tol;
        }
        if (!fused) ++rg;
        row_group[r] = rg;
    }
    std::size_t cg = 0;
    for (std::size_t c = 1; c < C; ++c) {
        bool fused = true;
        for (std::size_t r = 0; r < R && fused; ++r) {
            fused = std::abs(m(r, c) - m(r, c - 1)) <= tol;
        }
        if (!fused) ++cg;
        col_group[c] = cg;
    }

    const std::size_t ncol_groups = cg + 1;
    std::vector<int> labels(R * C);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t c = 0; c < C; ++c) {
            labels[r * C + c] = static_cast<int>(row_group[r] * ncol_groups + col_group[c]);
        }
    }
    return {std::move(labels), (rg + 1) * ncol_groups};
}

inline std::size_t crisp_default_q(std::size_t n) { return std::min<std::size_t>(n, 100); }

inline FitResult fit_crisp(const PointSet& points, std::size_t q, double lam,
                           double rho = 1.0, double tol = 1e-8,
                           std::size_t max_iter = 10000) {
    CrispProblem problem{q, bin_points(points, make_grid_spec(points, q)), lam, rho};
    problem.validate();

    FitResult fit;
    fit.spec = problem.binned.spec;
    fit.binned = std::move(problem.binned);
    fit.lam = lam;
    fit.n = points.n();

    CrispSolution sol = solve_crisp_grid(fit.binned.ybar, fit.binned.eta, lam, rho, tol,
                                         max_iter);
    fit.beta = std::move(sol.m);
    fit.converged = sol.converged;

    auto [labels, count] = crisp_blocks(fit.beta);
    fit.plateau_labels = std::move(labels);
    fit.df = count;
    fit.rss = training_rss(fit.binned, fit.beta);
    return fit;
}

// ---------------------------------------------------------------------------
// CART: greedy variance-reduction regression tree with weakest-link
// cost-complexity pruning chosen by k-fold cross-validation.
// ---------------------------------------------------------------------------

struct CartConfig {
    std::size_t min_leaf = 5;
    std::size_t max_depth = 20;
    std::size_t cv_folds = 5;
    std::uint64_t seed = 0;

    void validate() const {
        require(min_leaf >= 1, "CartConfig: min_leaf must be >= 1");
        require(max_depth >= 1, "CartConfig: max_depth must be >= 1");
        require(cv_folds >= 2, "CartConfig: cv_folds must be >= 2");
    }
};

struct CartLeaf {
    double x1_lo, x1_hi, x2_lo, x2_hi;
    double value;
    double sse;
    std::size_t count;
};

struct CartModel {
    struct Node {
        int axis = -1;  // -1 = leaf, otherwise splitting axis (1 or 2)
        double thresh = 0.0;
        int left = -1, right = -1;
        double value = 0.0;
        double sse = 0.0;
        std::size_t count = 0;
        double x1_lo = 0.0, x1_hi = 0.0, x2_lo = 0.0, x2_hi = 0.0;
    };

    std::vector<Node> nodes;  // nodes[0] is the root
    std::size_t n = 0;
    std::size_t df = 0;
    double rss = 0.0;
    double alpha = 0.0;
    double cv_rmse = 0.0;

    double predict(double x1, double x2) const {
        require(std::isfinite(x1) && std::isfinite(x2), "CartModel::predict: non-finite input");
        int at = 0;
        while (nodes[at].axis != -1) {
            const double x = nodes[at].axis == 1 ? x1 : x2;
            at = x < nodes[at].thresh ? nodes[at].left : nodes[at].right;
        }
        return nodes[at].value;
    }

    std::vector<CartLeaf> leaves() const {
        std::vector<CartLeaf> out;
        std::vector<int> stack{0};
        while (!stack.empty()) {
            const int at = stack.back();
            stack.pop_back();
            const Node& node = nodes[at];
            if (node.axis == -1) {
                out.push_back({node.x1_lo, node.x1_hi, node.x2_lo, node.x2_hi, node.value,
                               node.sse, node.count});
            } else {
                stack.push_back(node.right);
                stack.push_back(node.left);
            }
        }
        return out;
    }
};

namespace detail {

struct CartSplit {
    bool found = false;
    int axis = 0;
    double thresh = 0.0;
    double gain = 0.0;
    std::size_t pivot = 0;  // left child takes the first pivot sorted records
};

// Best variance-reduction split of the index range, ties resolved toward
// axis 1 and the smaller threshold so the tree is order-independent.
inline CartSplit cart_best_split(const PointSet& points, std::vector<std::size_t>& idx,
                                 std::size_t lo, std::size_t hi, double node_sse,
                                 std::size_t min_leaf) {
    CartSplit best;
    const std::size_t count = hi - lo;
    if (count < 2 * min_leaf) return best;
    const double eps = 1e-12 * std::max(1.0, node_sse);

    std::vector<std::size_t> order(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                                   idx.begin() + static_cast<std::ptrdiff_t>(hi));
    std::vector<double> coords(count);
    for (int axis : {1, 2}) {
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const Point& pa = points.records[a];
            const Point& pb = points.records[b];
            const double ca = axis == 1 ? pa.x1 : pa.x2;
            const double cb = axis == 1 ? pb.x1 : pb.x2;
            return ca != cb ? ca < cb : a < b;
        });
        for (std::size_t i = 0; i < count; ++i) {
            const Point& p = points.records[order[i]];
            coords[i] = axis == 1 ? p.x1 : p.x2;
        }
        double sum_left = 0.0, sum2_left = 0.0;
        double sum_all = 0.0, sum2_all = 0.0;
        for (std::size_t i = 0; i < count; ++i) {
            const double y = points.records[order[i]].y;
            sum_all += y;
            sum2_all += y * y;
        }
        for (std::size_t t = 1; t < count; ++t) {
            const double y = points.records[order[t - 1]].y;
            sum_left += y;
            sum2_left += y * y;
            if (t < min_leaf || count - t < min_leaf) continue;
            if (coords[t - 1] == coords[t]) continue;
            const double nl = static_cast<double>(t), nr = static_cast<double>(count - t);
            const double sse_left = sum2_left - sum_left * sum_left / nl;
            const double sum_right = sum_all - sum_left;
            const double sse_right = (sum2_all - sum2_left) - sum_right * sum_right / nr;
            const double gain = node_sse - sse_left - sse_right;
            if (gain > best.gain + eps || (!best.found && gain > eps)) {
                best.found = true;
                best.axis = axis;
                best.thresh = (coords[t - 1] + coords[t]) / 2.0;
                best.gain = gain;
                best.pivot = t;
            }
        }
    }
    if (best.found) {
        // Re-partition idx[lo, hi) so the left child occupies the front.
        std::stable_partition(idx.begin() + static_cast<std::ptrdiff_t>(lo),
                              idx.begin() + static_cast<std::ptrdiff_t>(hi),
                              [&](std::size_t a) {
                                  const Point& pa = points.records[a];
                                  return (best.axis == 1 ? pa.x1 : pa.x2) < best.thresh;
                              });
    }
    return best;
}

inline CartModel cart_grow(const PointSet& points, const std::vector<std::size_t>& subset,
                           const CartConfig& config) {
    CartModel model;
    model.n = subset.size();

    double x1_lo = std::numeric_limits<double>::infinity(), x1_hi = -x1_lo;
    double x2_lo = x1_lo, x2_hi = -x1_lo;
    for (std::size_t i : subset) {
        const Point& p = points.records[i];
        x1_lo = std::min(x1_lo, p.x1);
        x1_hi = std::max(x1_hi, p.x1);
        x2_lo = std::min(x2_lo, p.x2);
        x2_hi = std::max(x2_hi, p.x2);
    }

    std::vector<std::size_t> idx = subset;
    struct Item {
        int node;
        std::size_t lo, hi, depth;
    };
    std::vector<Item> stack;

    auto make_node = [&](std::size_t lo, std::size_t hi, double lo1, double hi1, double lo2,
                         double hi2) {
        CartModel::Node node;
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i = lo; i < hi; ++i) {
            const double y = points.records[idx[i]].y;
            sum += y;
            sum2 += y * y;
        }
        const double count = static_cast<double>(hi - lo);
        node.count = hi - lo;
        node.value = sum / count;
        node.sse = std::max(0.0, sum2 - sum * sum / count);
        node.x1_lo = lo1;
        node.x1_hi = hi1;
        node.x2_lo = lo2;
        node.x2_hi = hi2;
        model.nodes.push_back(node);
        return static_cast<int>(model.nodes.size() - 1);
    };

    make_node(0, idx.size(), x1_lo, x1_hi, x2_lo, x2_hi);
    stack.push_back({0, 0, idx.size(), 0});
    while (!stack.empty()) {
        const Item item = stack.back();
        stack.pop_back();
        CartModel::Node& node = model.nodes[static_cast<std::size_t>(item.node)];
        if (item.depth >= config.max_depth) continue;
        const CartSplit split = cart_best_split(points, idx, item.lo, item.hi, node.sse,
                                                config.min_leaf);
        if (!split.found) continue;

        const std::size_t mid = item.lo + split.pivot;
        const double lo1 = node.x1_lo, hi1 = node.x1_hi, lo2 = node.x2_lo, hi2 = node.x2_hi;
        int left, right;
        if (split.axis == 1) {
            left = make_node(item.lo, mid, lo1, split.thresh, lo2, hi2);
            right = make_node(mid, item.hi, split.thresh, hi1, lo2, hi2);
        } else {
            left = make_node(item.lo, mid, lo1, hi1, lo2, split.thresh);
            right = make_node(mid, item.hi, lo1, hi1, split.thresh, hi2);
        }
        CartModel::Node& parent = model.nodes[static_cast<std::size_t>(item.node)];
        parent.axis = split.axis;
        parent.thresh = split.thresh;
        parent.left = left;
        parent.right = right;
        stack.push_back({right, mid, item.hi, item.depth + 1});
        stack.push_back({left, item.lo, mid, item.depth + 1});
    }
    return model;
}

// Weakest-link pruning at a fixed alpha: a subtree collapses when its leaf
// cost plus complexity charge is no better than collapsing. Returns the pruned
// tree (nodes reindexed).
inline CartModel cart_prune(const CartModel& model, double alpha) {
    const std::size_t N = model.nodes.size();
    std::vector<double> cost(N);
    std::vector<std::size_t> leaf_count(N);
    std::vector<bool> collapse(N, false);

    // Nodes were appended parent-before-child, so a reverse scan is bottom-up.
    for (std::size_t i = N; i-- > 0;) {
        const CartModel::Node& node = model.nodes[i];
        if (node.axis == -1) {
            cost[i] = node.sse + alpha;
            leaf_count[i] = 1;
            continue;
        }
        const double kept = cost[static_cast<std::size_t>(node.left)] +
                            cost[static_cast<std::size_t>(node.right)];
        const double collapsed = node.sse + alpha;
        if (collapsed <= kept + 1e-12 * std::max(1.0, collapsed)) {
            cost[i] = collapsed;
            leaf_count[i] = 1;
            collapse[i] = true;
        } else {
            cost[i] = kept;
            leaf_count[i] = leaf_count[static_cast<std::size_t>(node.left)] +
                            leaf_count[static_cast<std::size_t>(node.right)];
        }
    }

    // Rebuild by explicit traversal preserving parent-before-child order.
    CartModel pruned;
    pruned.n = model.n;
    struct Rebuild {
        int src;
        int dst_parent;
        bool left;
    };
    std::vector<Rebuild> work{{0, -1, false}};
    while (!work.empty()) {
        const Rebuild item = work.back();
        work.pop_back();
        CartModel::Node node = model.nodes[static_cast<std::size_t>(item.src)];
        if (collapse[static_cast<std::size_t>(item.src)]) {
            node.axis = -1;
            node.left = node.right = -1;
        }
        const int dst = static_cast<int>(pruned.nodes.size());
        pruned.nodes.push_back(node);
        if (item.dst_parent >= 0) {
            auto& parent = pruned.nodes[static_cast<std::size_t>(item.dst_parent)];
            (item.left ? parent.left : parent.right) = dst;
        }
        if (node.axis != -1) {
            work.push_back({model.nodes[static_cast<std::size_t>(item.src)].right, dst, false});
            work.push_back({model.nodes[static_cast<std::size_t>(item.src)].left, dst, true});
        }
    }

    pruned.df = 0;
    pruned.rss = 0.0;
    for (const auto& node : pruned.nodes) {
        if (node.axis == -1) {
            pruned.df += 1;
            pruned.rss += node.sse;
        }
    }
    return pruned;
}

// The increasing sequence of critical complexity values at which the weakest
// link of the tree changes, computed by repeated pruning.
inline std::vector<double> cart_alpha_sequence(const CartModel& model) {
    std::vector<double> alphas{0.0};
    CartModel current = model;
    while (true) {
        // Find the minimal g(t) = (sse(t) - subtree sse) / (leaves - 1).
        const std::size_t N = current.nodes.size();
        if (N == 1) break;
        std::vector<double> sub_sse(N);
        std::vector<std::size_t> sub_leaves(N);
        double gmin = std::numeric_limits<double>::infinity();
        for (std::size_t i = N; i-- > 0;) {
            const auto& node = current.nodes[i];
            if (node.axis == -1) {
                sub_sse[i] = node.sse;
                sub_leaves[i] = 1;
                continue;
            }
            sub_sse[i] = sub_sse[static_cast<std::size_t>(node.left)] +
                         sub_sse[static_cast<std::size_t>(node.right)];
            sub_leaves[i] = sub_leaves[static_cast<std::size_t>(node.left)] +
                            sub_leaves[static_cast<std::size_t>(node.right)];
            const double g = (node.sse - sub_sse[i]) /
                             static_cast<double>(sub_leaves[i] - 1);
            gmin = std::min(gmin, g);
        }
        if (!std::isfinite(gmin)) break;
        if (alphas.empty() || gmin > alphas.back()) alphas.push_back(gmin);
        current = cart_prune(current, std::nextafter(gmin, std::numeric_limits<double>::infinity()));
        if (current.df <= 1) break;
    }
    return alphas;
}

}  // namespace detail

inline CartModel fit_cart(const PointSet& points, const CartConfig& config = {}) {
    points.validate();
    config.validate();

    const std::size_t n = points.n();
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    CartModel grown = detail::cart_grow(points, all, config);

    const std::vector<double> alphas = detail::cart_alpha_sequence(grown);
    if (alphas.size() <= 1 || config.cv_folds > n) {
        CartModel out = detail::cart_prune(grown, alphas.empty() ? 0.0 : alphas.front());
        out.alpha = alphas.empty() ? 0.0 : alphas.front();
        out.cv_rmse = 0.0;
        return out;
    }

    std::vector<std::size_t> fold_of(n);
    {
        Rng rng(config.seed);
        const std::vector<std::size_t> order = rng.permutation(n);
        for (std::size_t j = 0; j < n; ++j) fold_of[order[j]] = j % config.cv_folds;
    }

    const std::size_t k = config.cv_folds;
    std::vector<double> mean_rmse(alphas.size(), 0.0);
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> train;
        std::vector<std::size_t> held;
        for (std::size_t i = 0; i < n; ++i) {
            (fold_of[i] == f ? held : train).push_back(i);
        }
        const CartModel fold_tree = detail::cart_grow(points, train, config);
        for (std::size_t a = 0; a < alphas.size(); ++a) {
            const CartModel pruned = detail::cart_prune(fold_tree, alphas[a]);
            double sse = 0.0;
            for (std::size_t i : held) {
                const Point& p = points.records[i];
                const double dev = p.y - pruned.predict(p.x1, p.x2);
                sse += dev * dev;
            }
            mean_rmse[a] += std::sqrt(sse / static_cast<double>(held.size()));
        }
    }
    for (double& v : mean_rmse) v /= static_cast<double>(k);

    // Ties toward larger alpha: scanning ascending alphas with a weak
    // comparison keeps the last (coarsest) minimizer.
    std::size_t best = 0;
    for (std::size_t a = 1; a < alphas.size(); ++a) {
        if (mean_rmse[a] <= mean_rmse[best]) best = a;
    }

    CartModel out = detail::cart_prune(grown, alphas[best]);
    out.alpha = alphas[best];
    out.cv_rmse = mean_rmse[best];
    return out;
}

}  // namespace mvtv
