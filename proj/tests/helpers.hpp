#pragma once

#include <cstddef>
#include <vector>

#include <mvtv/core.hpp>
#include <mvtv/rng.hpp>

namespace test_helpers {

inline mvtv::PointSet make_points(const std::vector<mvtv::Point>& records) {
    mvtv::PointSet points;
    points.records = records;
    return points;
}

// Points with uniform coordinates and standard normal responses.
inline mvtv::PointSet random_points(mvtv::Rng& rng, std::size_t n, double coord_lo = 0.0,
                                    double coord_hi = 1.0) {
    mvtv::PointSet points;
    points.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        points.records.push_back({rng.uniform(coord_lo, coord_hi),
                                  rng.uniform(coord_lo, coord_hi), rng.normal()});
    }
    return points;
}

}  // namespace test_helpers
