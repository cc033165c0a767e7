#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include <mvtv/cli.hpp>
#include <mvtv/datasets.hpp>
#include <mvtv/rng.hpp>

#include "helpers.hpp"

namespace fs = std::filesystem;
using mvtv::PointSet;
using mvtv::cli::RunConfig;

namespace {

fs::path make_temp_dir(const std::string& tag) {
    const fs::path dir = fs::temp_directory_path() / ("mvtv_cli_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

void spill(const fs::path& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    out << body;
}

std::string metrics_without_runtime(const fs::path& path) {
    auto j = nlohmann::json::parse(slurp(path));
    j.erase("runtime_seconds");
    return j.dump();
}

}  // namespace

TEST_CASE("csv ingestion reads the strict three-column contract") {
    const fs::path dir = make_temp_dir("ingest_ok");
    spill(dir / "in.csv",
          "x1,x2,y\n0.5,0.25,1.5\n\n  0.75 , 0.1 , -2e-1 \n1,0,3.25\r\n");
    const PointSet points = mvtv::cli::ingest_csv((dir / "in.csv").string());
    REQUIRE(points.n() == 3);
    REQUIRE(points.records[0].x1 == 0.5);
    REQUIRE(points.records[1].y == -0.2);
    REQUIRE(points.records[2].x2 == 0.0);
    REQUIRE(points.records[2].y == 3.25);
}

TEST_CASE("csv ingestion reports precise failures") {
    const fs::path dir = make_temp_dir("ingest_bad");
    using mvtv::cli::DataError;

    REQUIRE_THROWS_AS(mvtv::cli::ingest_csv((dir / "missing.csv").string()), DataError);

    spill(dir / "header.csv", "a,b,c\n1,2,3\n");
    REQUIRE_THROWS_WITH(mvtv::cli::ingest_csv((dir / "header.csv").string()),
                        Catch::Matchers::ContainsSubstring("line 1"));

    spill(dir / "empty.csv", "");
    REQUIRE_THROWS_AS(mvtv::cli::ingest_csv((dir / "empty.csv").string()), DataError);

    spill(dir / "no_rows.csv", "x1,x2,y\n\n");
    REQUIRE_THROWS_AS(mvtv::cli::ingest_csv((dir / "no_rows.csv").string()), DataError);

    spill(dir / "fields.csv", "x1,x2,y\n1,2\n");
    REQUIRE_THROWS_WITH(mvtv::cli::ingest_csv((dir / "fields.csv").string()),
                        Catch::Matchers::ContainsSubstring("expected 3 fields"));

    // The bad token sits on file line 7 (header is line 1, blank lines count).
    spill(dir / "value.csv", "x1,x2,y\n1,1,1\n2,2,2\n\n\n3,3,3\n4,oops,4\n");
    REQUIRE_THROWS_WITH(mvtv::cli::ingest_csv((dir / "value.csv").string()),
                        Catch::Matchers::ContainsSubstring("line 7"));

    spill(dir / "nan.csv", "x1,x2,y\n1,1,nan\n");
    REQUIRE_THROWS_WITH(mvtv::cli::ingest_csv((dir / "nan.csv").string()),
                        Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("export then ingest reproduces every double exactly") {
    const fs::path dir = make_temp_dir("roundtrip");
    mvtv::Rng rng(701);
    PointSet points;
    for (int i = 0; i < 200; ++i) {
        points.records.push_back({rng.uniform(-1e3, 1e3), rng.normal(0.0, 1e-6),
                                  rng.uniform(-1e-9, 1e9)});
    }
    mvtv::cli::export_points_csv(points, (dir / "out.csv").string());
    const PointSet back = mvtv::cli::ingest_csv((dir / "out.csv").string());
    REQUIRE(back.n() == points.n());
    for (std::size_t i = 0; i < points.n(); ++i) {
        REQUIRE(back.records[i].x1 == points.records[i].x1);
        REQUIRE(back.records[i].x2 == points.records[i].x2);
        REQUIRE(back.records[i].y == points.records[i].y);
    }
}

TEST_CASE("count preprocessing keeps occupied cells with log counts") {
    PointSet points = test_helpers::make_points(
        {{0.0, 0.0, 9.0}, {0.1, 0.1, 9.0}, {0.2, 0.0, 9.0}, {1.0, 1.0, 9.0}});
    const PointSet out = mvtv::cli::preprocess_count_grid_log(points, 2);
    REQUIRE(out.n() == 2);
    REQUIRE(out.records[0].x1 == Catch::Approx(0.25));
    REQUIRE(out.records[0].x2 == Catch::Approx(0.25));
    REQUIRE(out.records[0].y == Catch::Approx(std::log(3.0)));
    REQUIRE(out.records[1].x1 == Catch::Approx(0.75));
    REQUIRE(out.records[1].x2 == Catch::Approx(0.75));
    REQUIRE(out.records[1].y == Catch::Approx(0.0));
}

TEST_CASE("count preprocessing tolerates a degenerate axis") {
    PointSet points = test_helpers::make_points(
        {{2.0, 0.0, 1.0}, {2.0, 0.4, 1.0}, {2.0, 1.0, 1.0}});
    const PointSet out = mvtv::cli::preprocess_count_grid_log(points, 4);
    REQUIRE(out.n() >= 1);
    for (const auto& p : out.records) REQUIRE(p.x1 == 2.0);
}

TEST_CASE("an end-to-end run writes a coherent fit and metrics") {
    const fs::path dir = make_temp_dir("run_mvtv");
    const PointSet points = mvtv::datasets::two_block(120, 0.4, 51);
    mvtv::cli::export_points_csv(points, (dir / "in.csv").string());

    RunConfig config;
    config.input = (dir / "in.csv").string();
    config.out_dir = (dir / "out").string();
    config.q_min = 2;
    config.q_max = 5;
    config.folds = 4;
    config.lambda_points = 12;
    config.lambda_span = 1e3;
    REQUIRE(mvtv::cli::run(config) == 0);

    const auto metrics = nlohmann::json::parse(slurp(dir / "out" / "metrics.json"));
    const std::size_t df = metrics.at("df").get<std::size_t>();
    const double rss = metrics.at("rss").get<double>();
    const double aic_value = metrics.at("aic").get<double>();
    REQUIRE(df >= 1);
    REQUIRE(rss > 0.0);
    const double expected_aic =
        120.0 * std::log(rss / 120.0) + 2.0 * static_cast<double>(df);
    REQUIRE(aic_value == Catch::Approx(expected_aic).margin(1e-9));
    REQUIRE(metrics.at("cv_rmse").get<double>() >= 0.0);
    REQUIRE(metrics.at("runtime_seconds").get<double>() >= 0.0);

    // fit.csv: header plus one row per cell; plateau ids count df distinct
    // values and the eta column accounts for every observation.
    std::ifstream fit(dir / "out" / "fit.csv");
    std::string line;
    REQUIRE(std::getline(fit, line));
    REQUIRE(line == "row,col,x1_lo,x1_hi,x2_lo,x2_hi,eta,ybar,beta,plateau");
    std::set<long> plateaus;
    double eta_total = 0.0;
    while (std::getline(fit, line)) {
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        REQUIRE(fields.size() == 10);
        eta_total += std::stod(fields[6]);
        plateaus.insert(std::stol(fields[9]));
    }
    REQUIRE(eta_total == Catch::Approx(120.0));
    REQUIRE(plateaus.size() == df);
}

TEST_CASE("reruns are byte-identical apart from the runtime stamp") {
    const fs::path dir = make_temp_dir("run_repeat");
    const PointSet points = mvtv::datasets::two_block(90, 0.4, 53);
    mvtv::cli::export_points_csv(points, (dir / "in.csv").string());

    RunConfig config;
    config.input = (dir / "in.csv").string();
    config.q_min = 2;
    config.q_max = 4;
    config.folds = 3;
    config.lambda_points = 10;
    config.lambda_span = 1e3;
    config.out_dir = (dir / "a").string();
    REQUIRE(mvtv::cli::run(config) == 0);
    config.out_dir = (dir / "b").string();
    REQUIRE(mvtv::cli::run(config) == 0);

    REQUIRE(slurp(dir / "a" / "fit.csv") == slurp(dir / "b" / "fit.csv"));
    REQUIRE(metrics_without_runtime(dir / "a" / "metrics.json") ==
            metrics_without_runtime(dir / "b" / "metrics.json"));
}

TEST_CASE("running every method produces a three-way comparison") {
    const fs::path dir = make_temp_dir("run_all");
    const PointSet points = mvtv::datasets::two_block(40, 0.4, 59);
    mvtv::cli::export_points_csv(points, (dir / "in.csv").string());

    RunConfig config;
    config.input = (dir / "in.csv").string();
    config.out_dir = (dir / "out").string();
    config.method = mvtv::cli::Method::all;
    config.q_min = 2;
    config.q_max = 4;
    config.folds = 3;
    config.lambda_points = 6;
    config.lambda_span = 100.0;
    REQUIRE(mvtv::cli::run(config) == 0);

    for (const char* sub : {"mvtv", "crisp", "cart"}) {
        REQUIRE(fs::exists(dir / "out" / sub / "fit.csv"));
        REQUIRE(fs::exists(dir / "out" / sub / "metrics.json"));
    }
    std::ifstream cmp(dir / "out" / "comparison.csv");
    std::string line;
    REQUIRE(std::getline(cmp, line));
    REQUIRE(line == "method,aic,cv_rmse");
    std::vector<std::string> methods;
    while (std::getline(cmp, line)) {
        methods.push_back(line.substr(0, line.find(',')));
    }
    REQUIRE(methods == std::vector<std::string>{"mvtv", "crisp", "cart"});
}

TEST_CASE("raster output is a well-formed binary graymap") {
    const fs::path dir = make_temp_dir("run_raster");
    const PointSet points = mvtv::datasets::two_block(80, 0.4, 61);
    mvtv::cli::export_points_csv(points, (dir / "in.csv").string());

    RunConfig config;
    config.input = (dir / "in.csv").string();
    config.out_dir = (dir / "out").string();
    config.q_min = 2;
    config.q_max = 4;
    config.folds = 3;
    config.lambda_points = 8;
    config.lambda_span = 1e3;
    config.raster = true;
    config.boundaries = true;
    REQUIRE(mvtv::cli::run(config) == 0);

    const std::string pgm = slurp(dir / "out" / "heatmap.pgm");
    std::istringstream header(pgm);
    std::string magic;
    std::size_t width = 0, height = 0, maxval = 0;
    header >> magic >> width >> height >> maxval;
    REQUIRE(magic == "P5");
    REQUIRE(maxval == 255);
    REQUIRE(width >= 1);
    REQUIRE(height >= 1);
    const auto pixel_start = static_cast<std::size_t>(header.tellg()) + 1;
    REQUIRE(pgm.size() == pixel_start + width * height);
}

TEST_CASE("failed runs exit one and leave no partial artifacts") {
    const fs::path dir = make_temp_dir("run_fail");
    spill(dir / "in.csv", "x1,x2,y\n0,0,1\n0.5,0.5,2\n1,1,3\n");

    RunConfig config;
    config.input = (dir / "in.csv").string();
    config.out_dir = (dir / "out").string();
    config.q_min = 2;
    config.q_max = 3;
    config.folds = 5;  // more folds than observations
    REQUIRE(mvtv::cli::run(config) == 1);
    REQUIRE(!fs::exists(dir / "out" / "fit.csv"));
    REQUIRE(!fs::exists(dir / "out" / "metrics.json"));
}

TEST_CASE("the installed binary runs the same workflow") {
    const fs::path dir = make_temp_dir("run_binary");
    const PointSet points = mvtv::datasets::two_block(60, 0.4, 67);
    mvtv::cli::export_points_csv(points, (dir / "in.csv").string());

    const std::string cmd = std::string(MVTV_CLI_PATH) + " " + (dir / "in.csv").string() +
                            " --out " + (dir / "out").string() +
                            " --method mvtv --q-min 2 --q-max 4 --folds 3" +
                            " --lambda-points 8 --lambda-span 1000";
    REQUIRE(std::system(cmd.c_str()) == 0);
    REQUIRE(fs::exists(dir / "out" / "fit.csv"));
    REQUIRE(fs::exists(dir / "out" / "metrics.json"));
}
