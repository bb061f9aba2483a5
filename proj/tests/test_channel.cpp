#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dtsync/channel.hpp"

using namespace dtsync;

namespace {

ChannelParams table_params() {
    ChannelParams p;
    p.rb_bandwidth_hz = 180e3;
    p.noise_psd_w_per_hz = std::pow(10.0, -20.5);  // -175 dBm/Hz
    p.waterfall_m_db = 0.023;
    p.fading_mean = 1.0;
    return p;
}

DeviceProfile device_at(double distance) {
    DeviceProfile d;
    d.tx_power_w = 0.5;
    d.payload_bits = 2000;
    d.distance_m = distance;
    return d;
}

}  // namespace

TEST_CASE("fixed fading factor gives inverse-square gain") {
    REQUIRE(gain_from_fading(1.0, 100.0) == Catch::Approx(1e-4));
    const double h1 = gain_from_fading(0.37, 60.0);
    const double h2 = gain_from_fading(0.37, 120.0);
    REQUIRE(h1 == Catch::Approx(4.0 * h2));
}

TEST_CASE("drawn fading factor has the configured mean") {
    ChannelParams p = table_params();
    DeviceProfile d = device_at(1.0);  // unit distance so the gain is the factor itself
    Rng rng(11);
    const int n = 100000;
    double mean = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double o = draw_gain(p, d, rng);
        mean += o;
        sq += o * o;
    }
    mean /= n;
    sq /= n;
    const double se = std::sqrt((sq - mean * mean) / n);
    REQUIRE(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("shannon rate reproduces the reference operating point") {
    ChannelParams p = table_params();
    DeviceProfile d = device_at(100.0);
    const double r = uplink_rate(1, 1, 1e-9, p, d);
    REQUIRE(r == Catch::Approx(3.554e6).epsilon(1e-3));
    REQUIRE(uplink_rate(0, 1, 1e-9, p, d) == 0.0);
    REQUIRE(uplink_rate(1, 1, 0.0, p, d) == 0.0);
}

TEST_CASE("delay is payload over rate with an infinite zero-rate limit") {
    const double r = 3.554e6;
    REQUIRE(uplink_delay(r, 2000) == Catch::Approx(5.63e-4).epsilon(1e-3));
    REQUIRE(std::isinf(uplink_delay(0.0, 2000)));
    REQUIRE(uplink_delay(r, 4000) == Catch::Approx(2.0 * uplink_delay(r, 2000)));
}

TEST_CASE("packet error probability reproduces the reference operating point") {
    ChannelParams p = table_params();
    DeviceProfile d = device_at(100.0);
    const double pe = packet_error_prob(1e-9, 1, p, d);
    // independent recomputation: 1 - exp(-10^(0.023/10) * N0 * W / (P h))
    const double m_lin = std::pow(10.0, 0.023 / 10.0);
    const double expected = 1.0 - std::exp(-m_lin * std::pow(10.0, -20.5) * 180e3 / (0.5 * 1e-9));
    REQUIRE(pe == Catch::Approx(expected).epsilon(1e-12));
    REQUIRE(pe == Catch::Approx(1.14e-6).epsilon(2e-3));
    REQUIRE(packet_error_prob(0.0, 1, p, d) == 1.0);

    ChannelParams no_waterfall = p;
    no_waterfall.waterfall_m_db = -400.0;  // m_lin -> 0
    REQUIRE(packet_error_prob(1e-9, 1, no_waterfall, d) == Catch::Approx(0.0).margin(1e-30));
}

TEST_CASE("rate and error respond monotonically to gain, power, threshold") {
    ChannelParams p = table_params();
    DeviceProfile d = device_at(100.0);
    double prev_rate = -1.0, prev_err = 2.0;
    for (double h = 1e-11; h < 1e-6; h *= 3.7) {
        const double r = uplink_rate(1, 2, h, p, d);
        const double e = packet_error_prob(h, 2, p, d);
        REQUIRE(r > prev_rate);
        REQUIRE(e < prev_err);
        prev_rate = r;
        prev_err = e;
    }
    DeviceProfile strong = d;
    strong.tx_power_w = 1.0;
    REQUIRE(uplink_rate(1, 1, 1e-9, p, strong) > uplink_rate(1, 1, 1e-9, p, d));
    REQUIRE(packet_error_prob(1e-9, 1, p, strong) < packet_error_prob(1e-9, 1, p, d));
    ChannelParams harder = p;
    harder.waterfall_m_db = 3.0;
    REQUIRE(packet_error_prob(1e-9, 1, harder, d) > packet_error_prob(1e-9, 1, p, d));
}

TEST_CASE("reception draw matches its probability") {
    Rng rng(5);
    REQUIRE(draw_reception(0.0, rng));
    REQUIRE_FALSE(draw_reception(1.0, rng));
    const int n = 100000;
    int ok = 0;
    for (int i = 0; i < n; ++i) ok += draw_reception(0.3, rng) ? 1 : 0;
    const double freq = static_cast<double>(ok) / n;
    const double se = std::sqrt(0.7 * 0.3 / n);
    REQUIRE(std::abs(freq - 0.7) < 3.0 * se);
}

TEST_CASE("monte-carlo error rate over fading matches quadrature of the expectation") {
    // The expectation form integrates the instantaneous error over the
    // exponential fading density; Simpson quadrature on a transformed grid
    // serves as the independent oracle.
    ChannelParams p = table_params();
    p.waterfall_m_db = 0.023;
    DeviceProfile d = device_at(400.0);  // weaker link so the error rate is visible

    const double m_lin = std::pow(10.0, p.waterfall_m_db / 10.0);
    const double k = m_lin * p.noise_psd_w_per_hz * p.rb_bandwidth_hz / d.tx_power_w;
    auto integrand = [&](double o) {
        const double h = o / (d.distance_m * d.distance_m);
        return (1.0 - std::exp(-k / h)) * std::exp(-o);  // fading mean 1
    };
    // Simpson rule on [0, 40] with a fine grid; the tail beyond is bounded
    // by exp(-40).
    const int steps = 400000;
    const double hi = 40.0;
    double quad = 0.0;
    const double dx = hi / steps;
    for (int i = 0; i <= steps; ++i) {
        const double x = i * dx;
        const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        quad += w * integrand(x == 0.0 ? 1e-300 : x);
    }
    quad *= dx / 3.0;

    Rng rng(31);
    const int n = 200000;
    double mc = 0.0, mc_sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double pe = packet_error_prob(draw_gain(p, d, rng), 1, p, d);
        mc += pe;
        mc_sq += pe * pe;
    }
    mc /= n;
    const double se = std::sqrt((mc_sq / n - mc * mc) / n);
    REQUIRE(std::abs(mc - quad) < 4.0 * se + 1e-9);
}
