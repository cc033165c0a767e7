#include <map>
#include <string>

#include <CLI11.hpp>

#include <mvtv/cli.hpp>

int main(int argc, char** argv) {
    CLI::App app{"Interpretable 2D regression: adaptive quantile grids + total-variation "
                 "denoising, with CRISP and CART baselines"};

    mvtv::cli::RunConfig config;
    std::string method = "mvtv";
    std::string preprocess = "none";

    app.add_option("input", config.input, "Input CSV with header x1,x2,y")->required();
    app.add_option("--out", config.out_dir, "Output directory")->required();
    app.add_option("--method", method, "Fitting method")
        ->check(CLI::IsMember({"mvtv", "crisp", "cart", "all"}))
        ->capture_default_str();
    app.add_option("--q-min", config.q_min, "Smallest grid granularity considered")
        ->capture_default_str();
    app.add_option("--q-max", config.q_max, "Largest grid granularity considered")
        ->capture_default_str();
    app.add_option("--folds", config.folds, "Cross-validation folds")->capture_default_str();
    app.add_option("--seed", config.seed, "Random seed for fold assignment")
        ->capture_default_str();
    app.add_option("--preprocess", preprocess, "Optional preprocessing step")
        ->check(CLI::IsMember({"none", "count-grid-log"}))
        ->capture_default_str();
    app.add_option("--bins", config.bins, "Grid size for count-grid-log preprocessing")
        ->capture_default_str();
    app.add_flag("--raster", config.raster, "Also write heatmap.pgm");
    app.add_flag("--boundaries", config.boundaries,
                 "Draw plateau boundaries as 0-value pixels in the raster");
    app.add_option("--lambda-points", config.lambda_points, "Number of penalty path points")
        ->capture_default_str();
    app.add_option("--lambda-span", config.lambda_span,
                   "Ratio between the largest and smallest path values")
        ->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    const std::map<std::string, mvtv::cli::Method> methods{
        {"mvtv", mvtv::cli::Method::mvtv},
        {"crisp", mvtv::cli::Method::crisp},
        {"cart", mvtv::cli::Method::cart},
        {"all", mvtv::cli::Method::all}};
    config.method = methods.at(method);
    config.preprocess = preprocess == "count-grid-log" ? mvtv::cli::Preprocess::count_grid_log
                                                       : mvtv::cli::Preprocess::none;

    return mvtv::cli::run(config);
}
