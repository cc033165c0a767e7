#pragma once

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "baselines.hpp"
#include "core.hpp"
#include "grid.hpp"
#include "model.hpp"
#include "selection.hpp"

namespace mvtv::cli {

enum class Method { mvtv, crisp, cart, all };
enum class Preprocess { none, count_grid_log };

struct RunConfig {
    std::string input;
    std::string out_dir;
    Method method = Method::mvtv;
    std::size_t q_min = 2;
    std::size_t q_max = 100;
    std::size_t folds = 5;
    std::uint64_t seed = 0;
    Preprocess preprocess = Preprocess::none;
    std::size_t bins = 100;
    bool raster = false;
    bool boundaries = false;
    std::size_t lambda_points = 50;
    double lambda_span = 1e4;
};

// Exit code 1: problems with the input data or configuration.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Exit code 2: an iterative solver failed to reach its tolerance.
struct ConvergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline double parse_field(std::string_view field, std::size_t line_no) {
    field = trim(field);
    double value = 0.0;
    const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc{} || end != field.data() + field.size()) {
        throw DataError("line " + std::to_string(line_no) + ": cannot parse '" +
                        std::string(field) + "' as a number");
    }
    if (!std::isfinite(value)) {
        throw DataError("line " + std::to_string(line_no) + ": non-finite value '" +
                        std::string(field) + "'");
    }
    return value;
}

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Strict CSV reader for the x1,x2,y contract. Line numbers in errors are file
// line numbers (the header is line 1); blank lines are skipped.
inline PointSet ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open input file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw DataError("empty file: " + path);
    if (detail::trim(line) != "x1,x2,y") {
        throw DataError("line 1: expected header 'x1,x2,y', got '" +
                        std::string(detail::trim(line)) + "'");
    }

    PointSet points;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string_view row = detail::trim(line);
        if (row.empty()) continue;

        std::vector<std::string_view> fields;
        std::size_t start = 0;
        for (std::size_t i = 0; i <= row.size(); ++i) {
            if (i == row.size() || row[i] == ',') {
                fields.push_back(row.substr(start, i - start));
                start = i + 1;
            }
        }
        if (fields.size() != 3) {
            throw DataError("line " + std::to_string(line_no) + ": expected 3 fields, got " +
                            std::to_string(fields.size()));
        }
        points.records.push_back({detail::parse_field(fields[0], line_no),
                                  detail::parse_field(fields[1], line_no),
                                  detail::parse_field(fields[2], line_no)});
    }
    if (points.records.empty()) throw DataError("no data rows in " + path);
    return points;
}

inline void export_points_csv(const PointSet& points, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open output file: " + path);
    out << "x1,x2,y\n";
    for (const Point& p : points.records) {
        out << detail::fmt(p.x1) << ',' << detail::fmt(p.x2) << ',' << detail::fmt(p.y)
            << '\n';
    }
}

// Count-based preprocessing: overlay a uniform bins-by-bins grid on the data
// bounding box, keep the centers of occupied cells, and regress on the log of
// each cell's count. Empty cells are omitted, not zero-filled.
inline PointSet preprocess_count_grid_log(const PointSet& points, std::size_t bins) {
    require(bins >= 2, "preprocess_count_grid_log: bins must be >= 2");
    points.validate();

    double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1;
    double lo2 = lo1, hi2 = -lo1;
    for (const Point& p : points.records) {
        lo1 = std::min(lo1, p.x1);
        hi1 = std::max(hi1, p.x1);
        lo2 = std::min(lo2, p.x2);
        hi2 = std::max(hi2, p.x2);
    }
    const double w1 = hi1 - lo1, w2 = hi2 - lo2;

    auto bin_of = [bins](double x, double lo, double width) -> std::size_t {
        if (width <= 0.0) return 0;
        const double t = (x - lo) / width * static_cast<double>(bins);
        const auto b = static_cast<std::size_t>(std::max(0.0, t));
        return std::min(b, bins - 1);
    };

    std::vector<std::size_t> counts(bins * bins, 0);
    for (const Point& p : points.records) {
        counts[bin_of(p.x2, lo2, w2) * bins + bin_of(p.x1, lo1, w1)] += 1;
    }

    PointSet out;
    for (std::size_t r = 0; r < bins; ++r) {
        for (std::size_t c = 0; c < bins; ++c) {
            const std::size_t count = counts[r * bins + c];
            if (count == 0) continue;
            const double x1 = w1 <= 0.0 ? lo1 : lo1 + (c + 0.5) * w1 / bins;
            const double x2 = w2 <= 0.0 ? lo2 : lo2 + (r + 0.5) * w2 / bins;
            out.records.push_back({x1, x2, std::log(static_cast<double>(count))});
        }
    }
    return out;
}

namespace detail {

struct BoundingBox {
    double lo1, hi1, lo2, hi2;
};

inline BoundingBox bounding_box(const PointSet& points) {
    BoundingBox box{std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity(),
                    std::numeric_limits<double>::infinity(),
                    -std::numeric_limits<double>::infinity()};
    for (const Point& p : points.records) {
        box.lo1 = std::min(box.lo1, p.x1);
        box.hi1 = std::max(box.hi1, p.x1);
        box.lo2 = std::min(box.lo2, p.x2);
        box.hi2 = std::max(box.hi2, p.x2);
    }
    return box;
}

// Tracks files written by one run so failures can remove partial output.
class ArtifactSink {
public:
    explicit ArtifactSink(std::filesystem::path root) : root_(std::move(root)) {}

    std::filesystem::path prepare(const std::string& relative) {
        const std::filesystem::path path = root_ / relative;
        std::filesystem::create_directories(path.parent_path());
        written_.push_back(path);
        return path;
    }

    void discard_all() {
        std::error_code ec;
        for (const auto& path : written_) std::filesystem::remove(path, ec);
        for (auto it = written_.rbegin(); it != written_.rend(); ++it) {
            auto dir = it->parent_path();
            while (dir != root_.parent_path() && std::filesystem::is_empty(dir, ec) && !ec) {
                std::filesystem::remove(dir, ec);
                dir = dir.parent_path();
            }
        }
    }

private:
    std::filesystem::path root_;
    std::vector<std::filesystem::path> written_;
};

inline void write_text(const std::filesystem::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << body;
}

// fit.csv schema: row,col,x1_lo,x1_hi,x2_lo,x2_hi,eta,ybar,beta,plateau with
// outer interval edges taken from the data bounding box.
inline std::string grid_fit_csv(const BinnedGrid& binned, const Grid& beta,
                                const std::vector<int>& labels, const BoundingBox& box) {
    const auto& spec = binned.spec;
    std::string body = "row,col,x1_lo,x1_hi,x2_lo,x2_hi,eta,ybar,beta,plateau\n";
    for (std::size_t r = 0; r < binned.rows(); ++r) {
        const double x2_lo = r == 0 ? box.lo2 : spec.breaks2[r - 1];
        const double x2_hi = r + 1 == binned.rows() ? box.hi2 : spec.breaks2[r];
        for (std::size_t c = 0; c < binned.cols(); ++c) {
            const double x1_lo = c == 0 ? box.lo1 : spec.breaks1[c - 1];
            const double x1_hi = c + 1 == binned.cols() ? box.hi1 : spec.breaks1[c];
            body += std::to_string(r) + ',' + std::to_string(c) + ',';
            body += fmt(x1_lo) + ',' + fmt(x1_hi) + ',' + fmt(x2_lo) + ',' + fmt(x2_hi) + ',';
            body += fmt(binned.eta(r, c)) + ',' + fmt(binned.ybar(r, c)) + ',';
            body += fmt(beta(r, c)) + ',' + std::to_string(labels[r * binned.cols() + c]);
            body += '\n';
        }
    }
    return body;
}

inline std::string cart_fit_csv(const CartModel& model) {
    std::string body = "row,col,x1_lo,x1_hi,x2_lo,x2_hi,eta,ybar,beta,plateau\n";
    const auto leaves = model.leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const CartLeaf& leaf = leaves[i];
        body += std::to_string(i) + ",0,";
        body += fmt(leaf.x1_lo) + ',' + fmt(leaf.x1_hi) + ',' + fmt(leaf.x2_lo) + ',' +
                fmt(leaf.x2_hi) + ',';
        body += std::to_string(leaf.count) + ',' + fmt(leaf.value) + ',' + fmt(leaf.value) +
                ',' + std::to_string(i) + '\n';
    }
    return body;
}

inline std::string metrics_json(std::size_t q, double lambda, std::size_t df, double rss,
                                double aic_value, double cv_rmse, double runtime_seconds) {
    nlohmann::json j;
    j["q"] = q;
    j["lambda"] = lambda;
    j["df"] = df;
    j["rss"] = rss;
    j["aic"] = aic_value;  // serialized as null when the fit is degenerate (rss = 0)
    j["cv_rmse"] = cv_rmse;
    j["runtime_seconds"] = runtime_seconds;
    return j.dump(2) + "\n";
}

// Binary PGM (P5) with values min-max scaled to 0..255; a constant surface
// maps to mid-gray 128. Image rows run from high x2 to low x2. With
// boundaries enabled, pixels whose plateau label differs from any 4-neighbor
// are forced to 0.
inline std::string heatmap_pgm(const Grid& values, const std::vector<int>& labels,
                               bool boundaries) {
    const std::size_t R = values.rows(), C = values.cols();
    double lo = values[0], hi = values[0];
    for (std::size_t i = 0; i < values.size(); ++i) {
        lo = std::min(lo, values[i]);
        hi = std::max(hi, values[i]);
    }
    const double span = hi - lo;

    std::string body = "P5\n" + std::to_string(C) + ' ' + std::to_string(R) + "\n255\n";
    body.reserve(body.size() + R * C);
    for (std::size_t img_r = 0; img_r < R; ++img_r) {
        const std::size_t r = R - 1 - img_r;
        for (std::size_t c = 0; c < C; ++c) {
            unsigned char byte;
            if (span <= 0.0) {
                byte = 128;
            } else {
                const double t = (values(r, c) - lo) / span;
                byte = static_cast<unsigned char>(std::lround(t * 255.0));
            }
            if (boundaries) {
                const int label = labels[r * C + c];
                const bool edge =
                    (r > 0 && labels[(r - 1) * C + c] != label) ||
                    (r + 1 < R && labels[(r + 1) * C + c] != label) ||
                    (c > 0 && labels[r * C + c - 1] != label) ||
                    (c + 1 < C && labels[r * C + c + 1] != label);
                if (edge) byte = 0;
            }
            body += static_cast<char>(byte);
        }
    }
    return body;
}

struct MethodScore {
    double aic = 0.0;
    double cv_rmse = 0.0;
};

struct Timer {
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
};

inline MethodScore run_mvtv(const PointSet& points, const RunConfig& config,
                            ArtifactSink& sink, const std::string& subdir) {
    require(config.q_min >= 1 && config.q_min <= config.q_max,
            "run: invalid q range");
    const Timer timer;
    const std::size_t q = select_q(points, config.q_min, config.q_max);
    const LambdaPath path = lambda_path(points, q, config.lambda_points, config.lambda_span);

    double lam, cv_rmse;
    if (path.values.size() == 1) {
        lam = path.values.front();
        cv_rmse = 0.0;
    } else {
        const CVReport report = kfold_cv(points, q, path, config.folds, config.seed);
        lam = report.selected_lambda;
        cv_rmse = 0.0;
        for (std::size_t i = 0; i < report.lambda.size(); ++i) {
            if (report.lambda[i] == lam) cv_rmse = report.mean_rmse[i];
        }
    }
    const FitResult fit = fit_mvtv(points, q, lam);
    if (!fit.converged) throw ConvergenceError("mvtv solver did not converge");
    const double runtime = timer.seconds();

    const BoundingBox box = bounding_box(points);
    write_text(sink.prepare(subdir + "fit.csv"),
               grid_fit_csv(fit.binned, fit.beta, fit.plateau_labels, box));
    const double score = aic(fit);
    write_text(sink.prepare(subdir + "metrics.json"),
               metrics_json(q, lam, fit.df, fit.rss, score, cv_rmse, runtime));
    if (config.raster) {
        write_text(sink.prepare(subdir + "heatmap.pgm"),
                   heatmap_pgm(fit.beta, fit.plateau_labels, config.boundaries));
    }
    return {score, cv_rmse};
}

inline MethodScore run_crisp(const PointSet& points, const RunConfig& config,
                             ArtifactSink& sink, const std::string& subdir) {
    if (points.n() < 2) throw DataError("crisp requires at least 2 points");
    const Timer timer;
    const std::size_t q = crisp_default_q(points.n());
    const GridSpec spec = make_grid_spec(points, q);
    const BinnedGrid binned = bin_points(points, spec);

    double mass = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < binned.eta.size(); ++i) {
        mass += binned.eta[i];
        mean += binned.eta[i] * binned.ybar[i];
    }
    mean /= mass;
    double fuse = 0.0;
    for (std::size_t i = 0; i < binned.eta.size(); ++i) {
        fuse += binned.eta[i] * std::abs(binned.ybar[i] - mean);
    }

    double lam = 0.0, cv_rmse = 0.0;
    if (fuse > 0.0) {
        require(config.lambda_points >= 2 && config.lambda_span > 1.0,
                "run: need lambda_points >= 2 and lambda_span > 1");
        // Path head: the certified fully-fused level for the group penalty.
        const double lam_max =
            std::sqrt(static_cast<double>(std::max(binned.rows(), binned.cols()))) * fuse;
        const double decay =
            std::pow(config.lambda_span, -1.0 / static_cast<double>(config.lambda_points - 1));
        std::vector<double> path(config.lambda_points);
        double value = lam_max;
        for (double& v : path) {
            v = value;
            value *= decay;
        }

        const std::size_t n = points.n(), k = config.folds;
        require(k >= 2, "run: folds must be >= 2");
        if (k > n) throw DataError("crisp cross-validation needs folds <= n");
        std::vector<std::size_t> fold_of(n);
        {
            Rng rng(config.seed);
            const std::vector<std::size_t> order = rng.permutation(n);
            for (std::size_t j = 0; j < n; ++j) fold_of[order[j]] = j % k;
        }
        std::vector<double> mean_rmse(path.size(), 0.0);
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
            const BinnedGrid fold_binned = bin_points(train, spec);
            for (std::size_t l = 0; l < path.size(); ++l) {
                const CrispSolution sol =
                    solve_crisp_grid(fold_binned.ybar, fold_binned.eta, path[l], 1.0, 1e-6);
                double sse = 0.0;
                for (const Point* p : held) {
                    const double pred = sol.m(cell_index(spec.breaks2, p->x2),
                                              cell_index(spec.breaks1, p->x1));
                    sse += (p->y - pred) * (p->y - pred);
                }
                mean_rmse[l] += std::sqrt(sse / static_cast<double>(held.size()));
            }
        }
        for (double& v : mean_rmse) v /= static_cast<double>(k);
        std::size_t best = 0;
        for (std::size_t l = 1; l < path.size(); ++l) {
            if (mean_rmse[l] < mean_rmse[best]) best = l;
        }
        lam = path[best];
        cv_rmse = mean_rmse[best];
    }

    const FitResult fit = fit_crisp(points, q, lam);
    if (!fit.converged) throw ConvergenceError("crisp solver did not converge");
    const double runtime = timer.seconds();

    const BoundingBox box = bounding_box(points);
    write_text(sink.prepare(subdir + "fit.csv"),
               grid_fit_csv(fit.binned, fit.beta, fit.plateau_labels, box));
    const double score = aic(fit);
    write_text(sink.prepare(subdir + "metrics.json"),
               metrics_json(q, lam, fit.df, fit.rss, score, cv_rmse, runtime));
    if (config.raster) {
        write_text(sink.prepare(subdir + "heatmap.pgm"),
                   heatmap_pgm(fit.beta, fit.plateau_labels, config.boundaries));
    }
    return {score, cv_rmse};
}

inline MethodScore run_cart(const PointSet& points, const RunConfig& config,
                            ArtifactSink& sink, const std::string& subdir) {
    const Timer timer;
    CartConfig cart_config;
    cart_config.cv_folds = config.folds;
    cart_config.seed = config.seed;
    const CartModel model = fit_cart(points, cart_config);
    const double runtime = timer.seconds();

    write_text(sink.prepare(subdir + "fit.csv"), cart_fit_csv(model));
    const double score = aic_score(model.n, model.rss, model.df);
    write_text(sink.prepare(subdir + "metrics.json"),
               metrics_json(0, 0.0, model.df, model.rss, score, model.cv_rmse, runtime));
    if (config.raster) {
        // CART has no native grid; rasterize predictions on a fixed probe
        // lattice over the bounding box.
        const std::size_t res = 100;
        const BoundingBox box = bounding_box(points);
        Grid probe(res, res);
        std::vector<int> labels(res * res);
        // Leaf ordinals in the same traversal order as CartModel::leaves(),
        // so boundary pixels line up with fit.csv plateau ids.
        std::vector<int> ordinal(model.nodes.size(), -1);
        {
            int next = 0;
            std::vector<int> stack{0};
            while (!stack.empty()) {
                const int at = stack.back();
                stack.pop_back();
                if (model.nodes[static_cast<std::size_t>(at)].axis == -1) {
                    ordinal[static_cast<std::size_t>(at)] = next++;
                } else {
                    stack.push_back(model.nodes[static_cast<std::size_t>(at)].right);
                    stack.push_back(model.nodes[static_cast<std::size_t>(at)].left);
                }
            }
        }
        for (std::size_t r = 0; r < res; ++r) {
            for (std::size_t c = 0; c < res; ++c) {
                const double x1 = box.lo1 + (c + 0.5) * (box.hi1 - box.lo1) / res;
                const double x2 = box.lo2 + (r + 0.5) * (box.hi2 - box.lo2) / res;
                int at = 0;
                while (model.nodes[static_cast<std::size_t>(at)].axis != -1) {
                    const auto& node = model.nodes[static_cast<std::size_t>(at)];
                    at = (node.axis == 1 ? x1 : x2) < node.thresh ? node.left : node.right;
                }
                probe(r, c) = model.nodes[static_cast<std::size_t>(at)].value;
                labels[r * res + c] = ordinal[static_cast<std::size_t>(at)];
            }
        }
        write_text(sink.prepare(subdir + "heatmap.pgm"),
                   heatmap_pgm(probe, labels, config.boundaries));
    }
    return {score, model.cv_rmse};
}

}  // namespace detail

// End-to-end run. Returns the process exit code: 0 success, 1 data or
// configuration error, 2 solver non-convergence. Partial outputs are removed
// on failure.
inline int run(const RunConfig& config) {
    detail::ArtifactSink sink{std::filesystem::path(config.out_dir)};
    try {
        if (config.input.empty() || config.out_dir.empty()) {
            throw DataError("input and output paths must be nonempty");
        }
        PointSet points = ingest_csv(config.input);
        if (config.preprocess == Preprocess::count_grid_log) {
            points = preprocess_count_grid_log(points, config.bins);
        }
        points.validate();

        if (config.method == Method::all) {
            const detail::MethodScore mvtv_score =
                detail::run_mvtv(points, config, sink, "mvtv/");
            const detail::MethodScore crisp_score =
                detail::run_crisp(points, config, sink, "crisp/");
            const detail::MethodScore cart_score =
                detail::run_cart(points, config, sink, "cart/");
            std::string body = "method,aic,cv_rmse\n";
            body += "mvtv," + detail::fmt(mvtv_score.aic) + ',' +
                    detail::fmt(mvtv_score.cv_rmse) + '\n';
            body += "crisp," + detail::fmt(crisp_score.aic) + ',' +
                    detail::fmt(crisp_score.cv_rmse) + '\n';
            body += "cart," + detail::fmt(cart_score.aic) + ',' +
                    detail::fmt(cart_score.cv_rmse) + '\n';
            detail::write_text(sink.prepare("comparison.csv"), body);
        } else if (config.method == Method::mvtv) {
            detail::run_mvtv(points, config, sink, "");
        } else if (config.method == Method::crisp) {
            detail::run_crisp(points, config, sink, "");
        } else {
            detail::run_cart(points, config, sink, "");
        }
        return 0;
    } catch (const ConvergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        sink.discard_all();
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        sink.discard_all();
        return 1;
    }
}

}  // namespace mvtv::cli
