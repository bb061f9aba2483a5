#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtsync/channel.hpp"
#include "dtsync/rng.hpp"
#include "dtsync/traces.hpp"

namespace dtsync {

/// Relative mismatch with a just-noticeable-difference filter, for scalar
/// sensors: max(|X - Xhat| / |Xhat| - xi, 0). A zero virtual state falls
/// back to the absolute error (callers flag that case).
inline double mismatch_jnd(double x, double xhat, double xi) {
    if (xhat == 0.0) return std::max(std::abs(x) - xi, 0.0);
    return std::max(std::abs(x - xhat) / std::abs(xhat) - xi, 0.0);
}

/// Euclidean mismatch for positioning sensors: max(||X - Xhat|| - xi, 0).
inline double mismatch_positioning(const State& x, const State& xhat, double xi) {
    return std::max(planar_distance(x, xhat) - xi, 0.0);
}

/// Scheduling decision, one binary entry per device.
struct Action {
    std::vector<std::uint8_t> schedule;
};

/// What the base station can see: per-device staleness (slots since the
/// last correct reception), the mismatch value reported with that reception,
/// and the outcome flag of the most recent resolved attempt.
struct Observation {
    std::vector<long> staleness_phi;
    std::vector<double> last_mismatch_y;
    std::vector<std::uint8_t> last_gamma;
};

/// A packet in the air: the sample taken at launch and the slot it lands in.
struct InFlightPacket {
    State sample;
    long due_slot = 0;
    double error_prob = 1.0;
};

/// Full simulator truth at a slot. Only the Observation part is visible to
/// the scheduler; the rest exists for rewards, metrics, and logs.
struct EnvSnapshot {
    long slot = 0;
    std::vector<State> physical;
    std::vector<State> virtual_state;
    std::vector<double> mismatch;
    std::vector<std::optional<InFlightPacket>> in_flight;
    int rb_budget = 18;
};

struct StepOutcome {
    double reward = 0.0;
    double cost = 0.0;
    Observation next_observation;
    bool episode_end = false;
    std::vector<LinkRealization> links;  // per-device realization of this slot's attempts
};

/// Discrete-time synchronization environment. Each step launches the
/// scheduled uplinks, advances the physical world one slot, resolves packets
/// whose delay has elapsed, and scores the resulting mismatch.
///
/// Slot timing: a packet launched at slot t carries the slot-t sample and
/// lands at t + max(1, ceil(delay / slot_duration)). On a correct reception
/// the virtual state adopts the launch sample, so its staleness equals the
/// realized delay in slots. Scheduling a device whose previous packet is
/// still in flight replaces that packet.
class TwinEnv {
public:
    TwinEnv(std::vector<DeviceProfile> profiles, std::vector<PhysicalTrace> traces,
            ChannelParams channel, int rb_budget, std::uint64_t seed)
        : profiles_(std::move(profiles)),
          traces_(std::move(traces)),
          channel_(channel),
          rng_(seed) {
        if (profiles_.size() != traces_.size())
            throw std::invalid_argument("TwinEnv: one trace per device required");
        if (profiles_.empty()) throw std::invalid_argument("TwinEnv: empty fleet");
        if (rb_budget < 1) throw std::invalid_argument("TwinEnv: rb_budget must be >= 1");
        horizon_ = std::numeric_limits<std::size_t>::max();
        for (const auto& t : traces_) horizon_ = std::min(horizon_, t.length());
        if (horizon_ < 2) throw std::invalid_argument("TwinEnv: traces must cover >= 2 slots");

        const std::size_t n = profiles_.size();
        snap_.slot = 0;
        snap_.rb_budget = rb_budget;
        snap_.physical.resize(n);
        snap_.virtual_state.resize(n);
        snap_.mismatch.assign(n, 0.0);
        snap_.in_flight.assign(n, std::nullopt);
        for (std::size_t i = 0; i < n; ++i) {
            snap_.physical[i] = traces_[i].samples[0];
            snap_.virtual_state[i] = traces_[i].samples[0];  // zero initial mismatch
        }
        obs_.staleness_phi.assign(n, 0);
        obs_.last_mismatch_y.assign(n, 0.0);
        obs_.last_gamma.assign(n, 1);
    }

    std::size_t device_count() const { return profiles_.size(); }
    std::size_t horizon() const { return horizon_; }
    long slot() const { return snap_.slot; }
    int rb_budget() const { return snap_.rb_budget; }
    const std::vector<DeviceProfile>& profiles() const { return profiles_; }
    const Observation& observation() const { return obs_; }
    const EnvSnapshot& truth() const { return snap_; }
    double slot_duration_s() const { return traces_.front().slot_duration_s; }
    long jnd_zero_fallbacks() const { return jnd_zero_fallbacks_; }

    /// Subsequent cost computations use the new budget; nothing else changes.
    void set_rb_budget(int m_new) {
        if (m_new < 1) throw std::invalid_argument("set_rb_budget: budget must be >= 1");
        snap_.rb_budget = m_new;
    }

    /// Appends per-device rows `slot,device_id,X,Xhat,Z,u,gamma,rb_used` after
    /// every step, for post-hoc plotting.
    void enable_episode_log(const std::string& path) {
        log_ = std::make_unique<std::ofstream>(path);
        if (!*log_) throw std::runtime_error("TwinEnv: cannot open episode log " + path);
        *log_ << "slot,device_id,X,Xhat,Z,u,gamma,rb_used\n";
    }

    StepOutcome step(const Action& action) {
        const std::size_t n = profiles_.size();
        if (action.schedule.size() != n)
            throw std::invalid_argument("TwinEnv::step: action length mismatch");
        if (static_cast<std::size_t>(snap_.slot) + 1 >= horizon_)
            throw std::logic_error("TwinEnv::step: episode already ended");

        StepOutcome out;
        out.links.resize(n);

        // Cost of this action under the current budget.
        long load = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (action.schedule[i]) load += profiles_[i].rb_cost_b;
        out.cost = load <= snap_.rb_budget ? static_cast<double>(snap_.rb_budget)
                                           : static_cast<double>(load);

        // Launch scheduled uplinks with the current slot's samples.
        const double slot_s = slot_duration_s();
        for (std::size_t i = 0; i < n; ++i) {
            if (!action.schedule[i]) continue;
            LinkRealization& link = out.links[i];
            link.gain_h = draw_gain(channel_, profiles_[i], rng_);
            link.rate_bps = uplink_rate(1, profiles_[i].rb_cost_b, link.gain_h, channel_, profiles_[i]);
            link.delay_s = uplink_delay(link.rate_bps, profiles_[i].payload_bits);
            link.error_prob = packet_error_prob(link.gain_h, profiles_[i].rb_cost_b, channel_, profiles_[i]);
            if (std::isfinite(link.delay_s)) {
                const long slots = std::max<long>(1, static_cast<long>(std::ceil(link.delay_s / slot_s)));
                snap_.in_flight[i] = InFlightPacket{snap_.physical[i], snap_.slot + slots, link.error_prob};
            }
        }

        // Advance the physical world.
        snap_.slot += 1;
        for (std::size_t i = 0; i < n; ++i)
            snap_.physical[i] = traces_[i].samples[static_cast<std::size_t>(snap_.slot)];
        out.episode_end = static_cast<std::size_t>(snap_.slot) + 1 >= horizon_;

        // Resolve packets landing this slot.
        std::vector<std::uint8_t> received_now(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            if (!snap_.in_flight[i] || snap_.in_flight[i]->due_slot > snap_.slot) continue;
            const bool ok = draw_reception(snap_.in_flight[i]->error_prob, rng_);
            out.links[i].received = ok;
            obs_.last_gamma[i] = ok ? 1 : 0;
            if (ok) {
                snap_.virtual_state[i] = snap_.in_flight[i]->sample;
                received_now[i] = 1;
            }
            snap_.in_flight[i].reset();
        }

        // Score the new slot and update what the base station sees.
        double weighted = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            snap_.mismatch[i] = device_mismatch(i);
            weighted += profiles_[i].priority_w * snap_.mismatch[i];
            if (received_now[i]) {
                obs_.staleness_phi[i] = 0;
                obs_.last_mismatch_y[i] = snap_.mismatch[i];
            } else {
                obs_.staleness_phi[i] += 1;
            }
        }
        out.reward = -weighted / static_cast<double>(n);
        out.next_observation = obs_;

        if (log_) {
            for (std::size_t i = 0; i < n; ++i) {
                *log_ << snap_.slot << ',' << profiles_[i].id << ','
                      << detail::format_double(snap_.physical[i].x) << ','
                      << detail::format_double(snap_.virtual_state[i].x) << ','
                      << detail::format_double(snap_.mismatch[i]) << ','
                      << static_cast<int>(action.schedule[i]) << ','
                      << static_cast<int>(obs_.last_gamma[i]) << ',' << load << '\n';
            }
        }
        return out;
    }

private:
    double device_mismatch(std::size_t i) {
        const DeviceProfile& p = profiles_[i];
        if (p.kind == DeviceKind::positioning)
            return mismatch_positioning(snap_.physical[i], snap_.virtual_state[i], p.threshold_xi);
        if (snap_.virtual_state[i].x == 0.0) ++jnd_zero_fallbacks_;
        return mismatch_jnd(snap_.physical[i].x, snap_.virtual_state[i].x, p.threshold_xi);
    }

    std::vector<DeviceProfile> profiles_;
    std::vector<PhysicalTrace> traces_;
    ChannelParams channel_;
    Rng rng_;
    std::size_t horizon_ = 0;
    EnvSnapshot snap_;
    Observation obs_;
    long jnd_zero_fallbacks_ = 0;
    std::unique_ptr<std::ofstream> log_;
};

/// Trajectory-average weighted mismatch: (1 / (T * N)) * sum_t w' Z_t.
inline double weighted_mismatch(const std::vector<std::vector<double>>& mismatch_rows,
                                const std::vector<double>& weights) {
    if (mismatch_rows.empty()) throw std::invalid_argument("weighted_mismatch: empty trajectory");
    double total = 0.0;
    for (const auto& row : mismatch_rows) {
        if (row.size() != weights.size())
            throw std::invalid_argument("weighted_mismatch: row width mismatch");
        for (std::size_t i = 0; i < row.size(); ++i) total += weights[i] * row[i];
    }
    return total / (static_cast<double>(mismatch_rows.size()) * static_cast<double>(weights.size()));
}

/// Root-mean-square twin error normalized by the physical signal's range
/// (bounding-box diagonal for planar series). A constant physical series has
/// no defined normalizer.
inline double nrmse(const std::vector<State>& physical, const std::vector<State>& virt,
                    bool planar) {
    if (physical.size() != virt.size() || physical.size() < 2)
        throw std::invalid_argument("nrmse: series must have equal lengths >= 2");
    double sq = 0.0;
    double min_x = physical[0].x, max_x = physical[0].x;
    double min_y = physical[0].y, max_y = physical[0].y;
    for (std::size_t t = 0; t < physical.size(); ++t) {
        const double err = planar ? planar_distance(physical[t], virt[t])
                                  : physical[t].x - virt[t].x;
        sq += err * err;
        min_x = std::min(min_x, physical[t].x);
        max_x = std::max(max_x, physical[t].x);
        min_y = std::min(min_y, physical[t].y);
        max_y = std::max(max_y, physical[t].y);
    }
    const double range = planar ? std::hypot(max_x - min_x, max_y - min_y) : max_x - min_x;
    if (!(range > 0.0)) throw std::domain_error("nrmse: constant physical series has no normalizer");
    return std::sqrt(sq / static_cast<double>(physical.size())) / range;
}

}  // namespace dtsync
