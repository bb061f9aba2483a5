#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtsync/rng.hpp"

namespace dtsync {

enum class DeviceKind { thermo_hygro, positioning };

/// Static per-device parameters.
struct DeviceProfile {
    int id = 0;
    DeviceKind kind = DeviceKind::thermo_hygro;
    double priority_w = 0.0;    // scheduling weight w_n, dimensionless
    int rb_cost_b = 1;          // resource blocks consumed per transmission
    double threshold_xi = 0.0;  // mismatch filter threshold
    long payload_bits = 2000;   // uplink packet size in bits
    double tx_power_w = 0.5;    // transmit power in watts
    double distance_m = 100.0;  // device-to-BS distance in meters
};

/// A physical state sample. Scalar devices use x only; positioning devices
/// use (x, y).
struct State {
    double x = 0.0;
    double y = 0.0;
};

inline double planar_distance(const State& a, const State& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

/// Per-device time series of physical states, one sample per slot.
struct PhysicalTrace {
    int device_id = 0;
    bool planar = false;
    double slot_duration_s = 1e-3;
    std::vector<State> samples;

    std::size_t length() const { return samples.size(); }
};

/// Random walk with occasional jumps: X_{t+1} = X_t + N(0, walk_sigma) and,
/// with probability jump_prob, an extra N(0, jump_scale) kick. Produces long
/// quiet stretches punctuated by abrupt level shifts.
inline PhysicalTrace generate_scalar_trace(std::uint64_t seed, std::size_t length, double base,
                                           double walk_sigma, double jump_prob, double jump_scale,
                                           double slot_duration_s = 1e-3) {
    if (length < 1) throw std::invalid_argument("generate_scalar_trace: length must be >= 1");
    Rng rng(seed);
    PhysicalTrace trace;
    trace.planar = false;
    trace.slot_duration_s = slot_duration_s;
    trace.samples.reserve(length);
    double x = base;
    trace.samples.push_back({x, 0.0});
    for (std::size_t t = 1; t < length; ++t) {
        x += rng.normal(0.0, walk_sigma);
        if (rng.uniform() < jump_prob) x += rng.normal(0.0, jump_scale);
        trace.samples.push_back({x, 0.0});
    }
    return trace;
}

/// Piecewise-linear motion along a closed waypoint loop at constant speed
/// (units per slot). The walker snaps to each waypoint on arrival and then
/// dwells a seeded 0..2 slots; the first leg starts immediately, so the
/// pre-arrival portion of the path is seed-independent.
inline PhysicalTrace generate_trajectory_trace(std::uint64_t seed, std::size_t length,
                                               const std::vector<State>& waypoints, double speed,
                                               double slot_duration_s = 1e-3) {
    if (length < 1) throw std::invalid_argument("generate_trajectory_trace: length must be >= 1");
    if (waypoints.size() < 2)
        throw std::invalid_argument("generate_trajectory_trace: need at least 2 waypoints");
    if (!(speed > 0.0)) throw std::invalid_argument("generate_trajectory_trace: speed must be > 0");

    Rng rng(seed);
    PhysicalTrace trace;
    trace.planar = true;
    trace.slot_duration_s = slot_duration_s;
    trace.samples.reserve(length);

    State pos = waypoints[0];
    std::size_t target = 1;  // waypoint we are heading to
    long dwell = 0;
    trace.samples.push_back(pos);
    for (std::size_t t = 1; t < length; ++t) {
        if (dwell > 0) {
            --dwell;
        } else {
            const State& goal = waypoints[target];
            const double dist = planar_distance(pos, goal);
            if (dist <= speed) {
                pos = goal;  // snap on arrival, keeping the step within speed
                target = (target + 1) % waypoints.size();
                dwell = static_cast<long>(rng.below(3));
            } else {
                pos.x += speed * (goal.x - pos.x) / dist;
                pos.y += speed * (goal.y - pos.y) / dist;
            }
        }
        trace.samples.push_back(pos);
    }
    return trace;
}

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

}  // namespace detail

/// Writes traces in the `slot,device_id,value_x,value_y` schema. Scalar
/// devices leave value_y empty. Doubles are written with 17 significant
/// digits so a reload reproduces the exact bit patterns.
inline void save_csv_traces(const std::string& path, const std::vector<PhysicalTrace>& traces) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_csv_traces: cannot open " + path);
    out << "slot,device_id,value_x,value_y\n";
    for (const auto& trace : traces) {
        for (std::size_t t = 0; t < trace.samples.size(); ++t) {
            out << t << ',' << trace.device_id << ',' << detail::format_double(trace.samples[t].x)
                << ',';
            if (trace.planar) out << detail::format_double(trace.samples[t].y);
            out << '\n';
        }
    }
}

/// Loads `slot,device_id,value_x,value_y` files. Per device, slots must
/// start at 0 and increase by 1 in file order; value_y must be consistently
/// present (positioning) or empty (scalar). Errors carry the 1-based file
/// line number.
inline std::vector<PhysicalTrace> load_csv_traces(const std::string& path,
                                                  double slot_duration_s) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv_traces: cannot open " + path);

    auto fail = [&](long line_no, const std::string& what) {
        throw std::runtime_error("load_csv_traces: parse error (line " + std::to_string(line_no) +
                                 "): " + what);
    };

    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) fail(1, "missing header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "slot,device_id,value_x,value_y")
        fail(line_no, "expected header slot,device_id,value_x,value_y");

    std::map<int, PhysicalTrace> by_device;  // ordered for stable output
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != 4) fail(line_no, "expected 4 columns");

        long slot = 0;
        int device_id = 0;
        double x = 0.0;
        try {
            slot = std::stol(fields[0]);
            device_id = std::stoi(fields[1]);
            x = std::stod(fields[2]);
        } catch (const std::exception&) {
            fail(line_no, "malformed numeric field");
        }
        if (!std::isfinite(x)) fail(line_no, "non-finite value_x");

        const bool has_y = !fields[3].empty();
        double y = 0.0;
        if (has_y) {
            try {
                y = std::stod(fields[3]);
            } catch (const std::exception&) {
                fail(line_no, "malformed value_y");
            }
            if (!std::isfinite(y)) fail(line_no, "non-finite value_y");
        }

        auto [it, inserted] = by_device.try_emplace(device_id);
        PhysicalTrace& trace = it->second;
        if (inserted) {
            trace.device_id = device_id;
            trace.planar = has_y;
            trace.slot_duration_s = slot_duration_s;
        } else if (trace.planar != has_y) {
            fail(line_no, "mixed scalar/positioning rows for device " + std::to_string(device_id));
        }
        if (slot != static_cast<long>(trace.samples.size()))
            fail(line_no, "slots for device " + std::to_string(device_id) +
                              " must start at 0 and increase by 1");
        trace.samples.push_back({x, y});
    }

    std::vector<PhysicalTrace> traces;
    traces.reserve(by_device.size());
    for (auto& [id, trace] : by_device) traces.push_back(std::move(trace));
    return traces;
}

}  // namespace dtsync
