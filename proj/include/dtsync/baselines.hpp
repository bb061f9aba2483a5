#pragma once

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtsync/traces.hpp"
#include "dtsync/twin_env.hpp"

namespace dtsync {

/// Cyclic greedy polling: starting from the pointer, schedule every device
/// whose block cost still fits the remaining budget; the pointer then
/// advances past the last device scheduled. Never exceeds the budget.
inline Action polling_schedule(const std::vector<DeviceProfile>& profiles, int rb_budget,
                               int& pointer_state) {
    const int n = static_cast<int>(profiles.size());
    if (n == 0) throw std::invalid_argument("polling_schedule: empty fleet");
    Action a;
    a.schedule.assign(n, 0);
    int remaining = rb_budget;
    int last_scheduled = -1;
    for (int i = 0; i < n; ++i) {
        const int dev = (pointer_state + i) % n;
        if (profiles[dev].rb_cost_b <= remaining) {
            a.schedule[dev] = 1;
            remaining -= profiles[dev].rb_cost_b;
            last_scheduled = dev;
        }
    }
    if (last_scheduled >= 0) pointer_state = (last_scheduled + 1) % n;
    return a;
}

/// Fixed-interval plan: one transmission period per device.
struct FixedIntervalPlan {
    std::vector<int> periods;
    double objective = 0.0;        // sum_n w_n * drift_n * T_n / 2
    double rb_consumption = 0.0;   // sum_n b_n / T_n
};

/// Chooses per-device periods from the candidate set minimizing the
/// linear-drift mismatch proxy sum_n w_n drift_n T_n / 2 subject to the
/// average budget sum_n b_n / T_n <= M. Solved exactly by dynamic
/// programming over devices with the budget discretized at 1/lcm of the
/// candidate periods. Ties prefer the larger period (cheaper in blocks), so
/// a zero-drift device always lands on the largest candidate.
inline FixedIntervalPlan fixed_interval_schedule(const std::vector<DeviceProfile>& profiles,
                                                 int rb_budget,
                                                 const std::vector<double>& change_stats,
                                                 const std::vector<int>& period_candidates) {
    const std::size_t n = profiles.size();
    if (period_candidates.empty())
        throw std::invalid_argument("fixed_interval_schedule: no period candidates");
    if (change_stats.size() != n)
        throw std::invalid_argument("fixed_interval_schedule: change_stats size mismatch");
    for (int t : period_candidates)
        if (t < 1) throw std::invalid_argument("fixed_interval_schedule: periods must be >= 1");

    long lcm = 1;
    for (int t : period_candidates) lcm = std::lcm(lcm, static_cast<long>(t));
    const long budget_units = static_cast<long>(rb_budget) * lcm;

    // Candidate consumptions in 1/lcm units, largest period first so equal
    // objectives resolve toward the cheaper assignment.
    std::vector<int> cands = period_candidates;
    std::sort(cands.begin(), cands.end(), std::greater<int>());

    constexpr double kInf = std::numeric_limits<double>::infinity();
    // dp[u] = min objective of the processed prefix using exactly u units.
    std::vector<double> dp(static_cast<std::size_t>(budget_units) + 1, kInf);
    std::vector<std::vector<int>> choice(n, std::vector<int>(budget_units + 1, -1));
    dp[0] = 0.0;

    for (std::size_t dev = 0; dev < n; ++dev) {
        std::vector<double> next(static_cast<std::size_t>(budget_units) + 1, kInf);
        for (long u = 0; u <= budget_units; ++u) {
            if (dp[u] == kInf) continue;
            for (std::size_t c = 0; c < cands.size(); ++c) {
                const int t = cands[c];
                const long units = static_cast<long>(profiles[dev].rb_cost_b) * (lcm / t);
                const long u2 = u + units;
                if (u2 > budget_units) continue;
                const double obj = dp[u] + profiles[dev].priority_w * change_stats[dev] *
                                               static_cast<double>(t) / 2.0;
                if (obj < next[u2]) {
                    next[u2] = obj;
                    choice[dev][u2] = static_cast<int>(c);
                }
            }
        }
        dp = std::move(next);
    }

    long best_u = -1;
    double best_obj = kInf;
    for (long u = 0; u <= budget_units; ++u) {
        if (dp[u] < best_obj) {
            best_obj = dp[u];
            best_u = u;
        }
    }
    if (best_u < 0) {
        std::string binding;
        for (std::size_t dev = 0; dev < n; ++dev) {
            const long min_units = static_cast<long>(profiles[dev].rb_cost_b) * (lcm / cands[0]);
            if (min_units > budget_units / static_cast<long>(n)) {
                if (!binding.empty()) binding += ", ";
                binding += std::to_string(profiles[dev].id);
            }
        }
        throw std::runtime_error(
            "fixed_interval_schedule: infeasible even at maximum periods; binding devices: " +
            (binding.empty() ? std::string("all") : binding));
    }

    FixedIntervalPlan plan;
    plan.periods.assign(n, cands[0]);
    plan.objective = best_obj;
    long u = best_u;
    for (std::size_t dev = n; dev-- > 0;) {
        const int c = choice[dev][u];
        plan.periods[dev] = cands[c];
        u -= static_cast<long>(profiles[dev].rb_cost_b) * (lcm / cands[c]);
    }
    for (std::size_t dev = 0; dev < n; ++dev)
        plan.rb_consumption += static_cast<double>(profiles[dev].rb_cost_b) / plan.periods[dev];
    return plan;
}

/// Executes a fixed-interval plan slot by slot. Device n fires at slots
/// congruent to n mod T_n; when the due devices exceed the budget, they are
/// admitted in order of priority-weighted drift (ties to the lower index)
/// and the rest skip this slot.
class FixedIntervalScheduler {
public:
    FixedIntervalScheduler(std::vector<DeviceProfile> profiles, FixedIntervalPlan plan,
                           std::vector<double> change_stats)
        : profiles_(std::move(profiles)),
          plan_(std::move(plan)),
          change_stats_(std::move(change_stats)) {
        order_.resize(profiles_.size());
        for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
        std::stable_sort(order_.begin(), order_.end(), [&](int a, int b) {
            return profiles_[a].priority_w * change_stats_[a] >
                   profiles_[b].priority_w * change_stats_[b];
        });
    }

    Action schedule(long slot, int rb_budget) const {
        Action a;
        a.schedule.assign(profiles_.size(), 0);
        int remaining = rb_budget;
        for (int dev : order_) {
            const int t = plan_.periods[dev];
            if ((slot % t) != (dev % t)) continue;
            if (profiles_[dev].rb_cost_b > remaining) continue;
            a.schedule[dev] = 1;
            remaining -= profiles_[dev].rb_cost_b;
        }
        return a;
    }

    const FixedIntervalPlan& plan() const { return plan_; }

private:
    std::vector<DeviceProfile> profiles_;
    FixedIntervalPlan plan_;
    std::vector<double> change_stats_;
    std::vector<int> order_;
};

/// Mean absolute per-slot change of each trace (Euclidean step length for
/// planar traces), the drift statistic the fixed-interval planner consumes.
inline std::vector<double> measure_change_stats(const std::vector<PhysicalTrace>& traces) {
    std::vector<double> stats;
    stats.reserve(traces.size());
    for (const auto& trace : traces) {
        double sum = 0.0;
        for (std::size_t t = 1; t < trace.samples.size(); ++t)
            sum += trace.planar
                       ? planar_distance(trace.samples[t], trace.samples[t - 1])
                       : std::abs(trace.samples[t].x - trace.samples[t - 1].x);
        stats.push_back(trace.samples.size() > 1
                            ? sum / static_cast<double>(trace.samples.size() - 1)
                            : 0.0);
    }
    return stats;
}

}  // namespace dtsync
