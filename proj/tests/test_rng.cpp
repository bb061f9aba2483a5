#include <catch2/catch_amalgamated.hpp>

#include "dtsync/rng.hpp"

using dtsync::Rng;

TEST_CASE("identical seeds give identical streams") {
    Rng a(42), b(42);
    for (int i = 0; i < 1000; ++i) REQUIRE(a.uniform() == b.uniform());
}

TEST_CASE("split streams are decorrelated from the parent") {
    Rng a(42);
    Rng child = a.split(7);
    Rng a2(42);
    Rng child2 = a2.split(7);
    for (int i = 0; i < 100; ++i) REQUIRE(child.uniform() == child2.uniform());
    REQUIRE(dtsync::derive_seed(1, 2) != dtsync::derive_seed(1, 3));
}

TEST_CASE("transform moments are roughly right") {
    Rng rng(123);
    const int n = 200000;
    double mean_n = 0.0, mean_e = 0.0, mean_u = 0.0;
    for (int i = 0; i < n; ++i) {
        mean_n += rng.normal();
        mean_e += rng.exponential(2.0);
        mean_u += rng.uniform();
    }
    mean_n /= n;
    mean_e /= n;
    mean_u /= n;
    REQUIRE(std::abs(mean_n) < 0.01);
    REQUIRE(std::abs(mean_e - 2.0) < 0.02);
    REQUIRE(std::abs(mean_u - 0.5) < 0.005);
}

TEST_CASE("logistic noise is symmetric") {
    Rng rng(9);
    double mean = 0.0;
    for (int i = 0; i < 100000; ++i) mean += rng.logistic();
    mean /= 100000;
    REQUIRE(std::abs(mean) < 0.03);
}
