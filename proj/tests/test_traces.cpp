#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "dtsync/traces.hpp"

using namespace dtsync;

TEST_CASE("zero-noise scalar trace stays at the base level") {
    PhysicalTrace t = generate_scalar_trace(1, 5, 20.0, 0.0, 0.0, 0.0);
    REQUIRE(t.samples.size() == 5);
    for (const auto& s : t.samples) REQUIRE(s.x == 20.0);
}

TEST_CASE("scalar generator is deterministic in the seed") {
    PhysicalTrace a = generate_scalar_trace(7, 500, 20.0, 0.05, 0.01, 2.0);
    PhysicalTrace b = generate_scalar_trace(7, 500, 20.0, 0.05, 0.01, 2.0);
    PhysicalTrace c = generate_scalar_trace(8, 500, 20.0, 0.05, 0.01, 2.0);
    REQUIRE(a.samples.size() == b.samples.size());
    bool all_equal = true, differs_from_c = false;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        all_equal = all_equal && a.samples[i].x == b.samples[i].x;
        differs_from_c = differs_from_c || a.samples[i].x != c.samples[i].x;
    }
    REQUIRE(all_equal);
    REQUIRE(differs_from_c);
}

TEST_CASE("scalar trace per-step change matches the folded-normal mixture mean") {
    // abs of the step is folded normal; the mixture mean is computed in
    // closed form, independently of the generator.
    const double walk_sigma = 0.05, jump_prob = 0.01, jump_scale = 2.0;
    const std::size_t len = 10000;
    PhysicalTrace t = generate_scalar_trace(7, len, 20.0, walk_sigma, jump_prob, jump_scale);

    const double fold = std::sqrt(2.0 / M_PI);
    const double sigma_jump = std::sqrt(walk_sigma * walk_sigma + jump_scale * jump_scale);
    const double analytic_mean =
        (1.0 - jump_prob) * walk_sigma * fold + jump_prob * sigma_jump * fold;

    std::vector<double> abs_steps;
    for (std::size_t i = 1; i < len; ++i)
        abs_steps.push_back(std::abs(t.samples[i].x - t.samples[i - 1].x));
    double mean = 0.0;
    for (double v : abs_steps) mean += v;
    mean /= abs_steps.size();
    double var = 0.0;
    for (double v : abs_steps) var += (v - mean) * (v - mean);
    var /= (abs_steps.size() - 1);
    const double se = std::sqrt(var / abs_steps.size());

    REQUIRE(std::abs(mean - analytic_mean) < 2.0 * se + 1e-12);
}

TEST_CASE("length zero is rejected") {
    REQUIRE_THROWS_AS(generate_scalar_trace(1, 0, 0.0, 1.0, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("trajectory moves at constant speed along the first leg") {
    const std::vector<State> wp{{0.0, 0.0}, {10.0, 0.0}};
    for (std::uint64_t seed : {1ull, 2ull, 99ull}) {
        PhysicalTrace t = generate_trajectory_trace(seed, 20, wp, 1.0);
        REQUIRE(t.samples[3].x == Catch::Approx(3.0).margin(1e-12));
        REQUIRE(t.samples[3].y == Catch::Approx(0.0).margin(1e-12));
        REQUIRE(t.samples[10].x == Catch::Approx(10.0).margin(1e-12));
    }
}

TEST_CASE("trajectory consecutive-sample distance never exceeds the speed") {
    const std::vector<State> wp{{0.0, 0.0}, {7.3, 0.0}, {7.3, 4.1}};
    const double speed = 0.9;
    PhysicalTrace t = generate_trajectory_trace(3, 400, wp, speed);
    for (std::size_t i = 1; i < t.samples.size(); ++i)
        REQUIRE(planar_distance(t.samples[i], t.samples[i - 1]) <= speed + 1e-9);
}

TEST_CASE("fewer than two waypoints is rejected") {
    REQUIRE_THROWS_AS(generate_trajectory_trace(1, 10, {{0.0, 0.0}}, 1.0), std::invalid_argument);
}

TEST_CASE("csv round trip reproduces sample values bitwise") {
    const std::string path = std::filesystem::temp_directory_path() / "dtsync_traces_rt.csv";
    PhysicalTrace scalar = generate_scalar_trace(7, 50, 20.0, 0.05, 0.01, 2.0);
    scalar.device_id = 0;
    PhysicalTrace planar = generate_trajectory_trace(5, 50, {{0.0, 0.0}, {3.0, 4.0}}, 0.7);
    planar.device_id = 1;
    save_csv_traces(path, {scalar, planar});

    auto loaded = load_csv_traces(path, 1e-3);
    REQUIRE(loaded.size() == 2);
    REQUIRE_FALSE(loaded[0].planar);
    REQUIRE(loaded[1].planar);
    for (std::size_t i = 0; i < scalar.samples.size(); ++i)
        REQUIRE(loaded[0].samples[i].x == scalar.samples[i].x);
    for (std::size_t i = 0; i < planar.samples.size(); ++i) {
        REQUIRE(loaded[1].samples[i].x == planar.samples[i].x);
        REQUIRE(loaded[1].samples[i].y == planar.samples[i].y);
    }
    std::remove(path.c_str());
}

TEST_CASE("csv loader keeps file order for one device") {
    const std::string path = std::filesystem::temp_directory_path() / "dtsync_traces_ord.csv";
    {
        std::ofstream out(path);
        out << "slot,device_id,value_x,value_y\n0,3,1.5,\n1,3,2.5,\n2,3,3.5,\n";
    }
    auto loaded = load_csv_traces(path, 1e-3);
    REQUIRE(loaded.size() == 1);
    REQUIRE(loaded[0].samples.size() == 3);
    REQUIRE(loaded[0].samples[0].x == 1.5);
    REQUIRE(loaded[0].samples[2].x == 3.5);
    std::remove(path.c_str());
}

TEST_CASE("csv loader rejects slot gaps with the offending line") {
    const std::string path = std::filesystem::temp_directory_path() / "dtsync_traces_gap.csv";
    {
        std::ofstream out(path);
        out << "slot,device_id,value_x,value_y\n0,0,1.0,\n2,0,2.0,\n";
    }
    REQUIRE_THROWS_WITH(load_csv_traces(path, 1e-3), Catch::Matchers::ContainsSubstring("line 3"));
    std::remove(path.c_str());
}

TEST_CASE("csv loader rejects mixed arity for one device") {
    const std::string path = std::filesystem::temp_directory_path() / "dtsync_traces_mix.csv";
    {
        std::ofstream out(path);
        out << "slot,device_id,value_x,value_y\n0,0,1.0,\n1,0,2.0,3.0\n";
    }
    REQUIRE_THROWS_WITH(load_csv_traces(path, 1e-3), Catch::Matchers::ContainsSubstring("mixed"));
    std::remove(path.c_str());
}
