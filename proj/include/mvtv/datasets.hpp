#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "core.hpp"
#include "rng.hpp"

namespace mvtv::datasets {

// Piecewise-constant truth on [0,1]^2: a 3x3 block layout with cuts at thirds
// on both axes. Every pair of adjacent blocks differs by 2.5, five noise
// standard deviations at the default sigma = 0.5.
inline double block_surface(double x1, double x2) {
    auto band = [](double x) { return x < 1.0 / 3.0 ? 0 : x < 2.0 / 3.0 ? 1 : 2; };
    static constexpr double kValues[3][3] = {
        {0.0, 2.5, 0.0}, {2.5, 5.0, 2.5}, {0.0, 2.5, 0.0}};
    return kValues[band(x2)][band(x1)];
}

// n noisy samples of block_surface with both features uniform on [0,1).
inline PointSet blocks_sample(std::size_t n, double sigma, std::uint64_t seed) {
    require(n >= 1, "blocks_sample: n must be >= 1");
    Rng rng(seed);
    PointSet points;
    points.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = rng.uniform();
        const double x2 = rng.uniform();
        points.records.push_back({x1, x2, block_surface(x1, x2) + sigma * rng.normal()});
    }
    return points;
}

// n noisy samples of a two-level step: y ~= 0 on x1 < 0.5 and y ~= 5 beyond,
// with both features uniform on [0,1).
inline PointSet two_block(std::size_t n, double sigma, std::uint64_t seed) {
    require(n >= 1, "two_block: n must be >= 1");
    Rng rng(seed);
    PointSet points;
    points.records.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double x1 = rng.uniform();
        const double x2 = rng.uniform();
        const double y = (x1 < 0.5 ? 0.0 : 5.0) + sigma * rng.normal();
        points.records.push_back({x1, x2, y});
    }
    return points;
}

}  // namespace mvtv::datasets
