#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include "dtsync/rng.hpp"
#include "dtsync/traces.hpp"

namespace dtsync {

/// Uplink channel parameters shared by all devices.
struct ChannelParams {
    double rb_bandwidth_hz = 180e3;               // bandwidth W of one resource block
    double noise_psd_w_per_hz = 3.16227766016838e-21;  // N0, -175 dBm/Hz
    double waterfall_m_db = 0.023;                // waterfall threshold of the error model, in dB
    double fading_mean = 1.0;                     // mean of the exponential power-fading factor
};

/// One realized uplink attempt.
struct LinkRealization {
    double gain_h = 0.0;
    double rate_bps = 0.0;
    double delay_s = std::numeric_limits<double>::infinity();
    double error_prob = 1.0;
    bool received = false;
};

/// Channel gain h = o * d^-2 for a given power-fading factor o. Exposed so
/// tests can pin o instead of drawing it.
inline double gain_from_fading(double fading_o, double distance_m) {
    if (!(distance_m > 0.0)) throw std::invalid_argument("gain_from_fading: distance must be > 0");
    return fading_o / (distance_m * distance_m);
}

/// Draws the per-slot channel gain. The power of a Rayleigh envelope is
/// exponential, so o ~ Exp(mean = fading_mean).
inline double draw_gain(const ChannelParams& params, const DeviceProfile& profile, Rng& rng) {
    return gain_from_fading(rng.exponential(params.fading_mean), profile.distance_m);
}

/// Shannon uplink rate over b resource blocks, in bits/s. Zero when the
/// device is not scheduled.
inline double uplink_rate(int scheduled_u, int rb_count_b, double gain_h,
                          const ChannelParams& params, const DeviceProfile& profile) {
    if (rb_count_b < 1) throw std::invalid_argument("uplink_rate: rb_count_b must be >= 1");
    if (scheduled_u == 0) return 0.0;
    const double band = static_cast<double>(rb_count_b) * params.rb_bandwidth_hz;
    const double snr = profile.tx_power_w * gain_h / (params.noise_psd_w_per_hz * band);
    return band * std::log2(1.0 + snr);
}

/// Transmission delay L / r; infinite when the rate is zero.
inline double uplink_delay(double rate_bps, long payload_bits) {
    if (payload_bits < 1) throw std::invalid_argument("uplink_delay: payload_bits must be >= 1");
    if (!(rate_bps > 0.0)) return std::numeric_limits<double>::infinity();
    return static_cast<double>(payload_bits) / rate_bps;
}

/// Instantaneous packet-error probability 1 - exp(-m_lin * N0 * b * W / (P * h))
/// with the waterfall threshold converted from dB. The textbook error rate is
/// the expectation of this quantity over the fading draw; the simulator
/// applies it per slot with the drawn gain, and the expectation is recovered
/// as an empirical average.
inline double packet_error_prob(double gain_h, int rb_count_b, const ChannelParams& params,
                                const DeviceProfile& profile) {
    if (rb_count_b < 1) throw std::invalid_argument("packet_error_prob: rb_count_b must be >= 1");
    if (!(gain_h > 0.0)) return 1.0;
    const double m_lin = std::pow(10.0, params.waterfall_m_db / 10.0);
    const double exponent =
        m_lin * params.noise_psd_w_per_hz * static_cast<double>(rb_count_b) *
        params.rb_bandwidth_hz / (profile.tx_power_w * gain_h);
    return -std::expm1(-exponent);
}

/// Bernoulli reception: true with probability 1 - error_prob.
inline bool draw_reception(double error_prob, Rng& rng) {
    if (error_prob < 0.0 || error_prob > 1.0)
        throw std::invalid_argument("draw_reception: error_prob must be in [0, 1]");
    return rng.uniform() >= error_prob;
}

}  // namespace dtsync
