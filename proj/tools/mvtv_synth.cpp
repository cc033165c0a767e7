// Writes synthetic benchmark datasets as x1,x2,y CSV files.

#include <cstdint>
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include <mvtv/cli.hpp>
#include <mvtv/datasets.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Synthetic dataset generator for the grid regression benchmarks"};

    std::string surface = "blocks";
    std::string out;
    std::size_t n = 2000;
    double sigma = 0.5;
    std::uint64_t seed = 0;

    app.add_option("--surface", surface, "Which synthetic truth to sample")
        ->check(CLI::IsMember({"blocks", "two-block"}))
        ->capture_default_str();
    app.add_option("--n", n, "Number of points")->capture_default_str();
    app.add_option("--sigma", sigma, "Noise standard deviation")->capture_default_str();
    app.add_option("--seed", seed, "Random seed")->capture_default_str();
    app.add_option("--out", out, "Output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        const mvtv::PointSet points = surface == "blocks"
                                          ? mvtv::datasets::blocks_sample(n, sigma, seed)
                                          : mvtv::datasets::two_block(n, sigma, seed);
        mvtv::cli::export_points_csv(points, out);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
