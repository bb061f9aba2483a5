#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "dtsync/agent.hpp"
#include "dtsync/baselines.hpp"
#include "dtsync/channel.hpp"
#include "dtsync/cmdp_oracle.hpp"
#include "dtsync/replay.hpp"
#include "dtsync/rng.hpp"
#include "dtsync/traces.hpp"
#include "dtsync/twin_env.hpp"

namespace dtsync {

/// Fleet composition. Weights left as NaN resolve to the 3/N, 2/N, 1/N
/// priority split over thermometers, hygrometers, and positioning sensors.
struct FleetSpec {
    int n_thermo = 8;
    int n_hygro = 8;
    int n_positioning = 4;
    double w_thermo = std::numeric_limits<double>::quiet_NaN();
    double w_hygro = std::numeric_limits<double>::quiet_NaN();
    double w_positioning = std::numeric_limits<double>::quiet_NaN();
    int b_thermo = 1;
    int b_hygro = 1;
    int b_positioning = 5;
    double threshold_xi = 1e-2;
    long payload_bits = 2000;  // 250 bytes
    double tx_power_w = 0.5;
    double dist_min_m = 50.0;
    double dist_max_m = 150.0;

    int total_devices() const { return n_thermo + n_hygro + n_positioning; }
};

struct TraceParams {
    double thermo_base = 22.0;
    double hygro_base = 55.0;
    double base_spread = 2.0;       // per-device offset scale on the base level
    double walk_sigma = 0.05;
    double jump_prob = 0.01;
    double jump_scale = 2.0;
    double positioning_speed = 0.35;
    double area_side = 12.0;        // rectangle patrol loop side length
    double slot_duration_s = 1e-3;
};

struct ExperimentConfig {
    std::string scenario = "default";
    FleetSpec fleet;
    TraceParams traces;
    ChannelParams channel;
    AgentConfig agent;

    int rb_budget = 18;
    std::vector<BudgetChange> budget_schedule;  // convergence scenario stages
    int episodes = 200;
    int slots_per_episode = 250;
    int eval_episodes = 3;
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::string out_dir = "out";

    std::vector<int> sweep_budgets = {9, 15, 27, 36};
    std::vector<int> scaling_devices = {10, 15, 20, 25};
    int scaling_budget = 10;
    std::vector<int> consumption_budgets = {9, 18, 27};
    std::vector<int> period_candidates = {1, 2, 4, 8, 16, 32};
    int threads = 2;

    void validate() const {
        if (seeds.empty()) throw std::invalid_argument("ExperimentConfig: seeds must be nonempty");
        if (fleet.total_devices() < 1)
            throw std::invalid_argument("ExperimentConfig: empty fleet");
        if (episodes < 0 || slots_per_episode < 2)
            throw std::invalid_argument("ExperimentConfig: bad episode shape");
    }
};

// --- config json -------------------------------------------------------------

inline void from_json_into(const nlohmann::json& j, FleetSpec& f) {
    f.n_thermo = j.value("n_thermo", f.n_thermo);
    f.n_hygro = j.value("n_hygro", f.n_hygro);
    f.n_positioning = j.value("n_positioning", f.n_positioning);
    f.w_thermo = j.value("w_thermo", f.w_thermo);
    f.w_hygro = j.value("w_hygro", f.w_hygro);
    f.w_positioning = j.value("w_positioning", f.w_positioning);
    f.b_thermo = j.value("b_thermo", f.b_thermo);
    f.b_hygro = j.value("b_hygro", f.b_hygro);
    f.b_positioning = j.value("b_positioning", f.b_positioning);
    f.threshold_xi = j.value("threshold_xi", f.threshold_xi);
    f.payload_bits = j.value("payload_bits", f.payload_bits);
    f.tx_power_w = j.value("tx_power_w", f.tx_power_w);
    f.dist_min_m = j.value("dist_min_m", f.dist_min_m);
    f.dist_max_m = j.value("dist_max_m", f.dist_max_m);
}

inline void from_json_into(const nlohmann::json& j, TraceParams& t) {
    t.thermo_base = j.value("thermo_base", t.thermo_base);
    t.hygro_base = j.value("hygro_base", t.hygro_base);
    t.base_spread = j.value("base_spread", t.base_spread);
    t.walk_sigma = j.value("walk_sigma", t.walk_sigma);
    t.jump_prob = j.value("jump_prob", t.jump_prob);
    t.jump_scale = j.value("jump_scale", t.jump_scale);
    t.positioning_speed = j.value("positioning_speed", t.positioning_speed);
    t.area_side = j.value("area_side", t.area_side);
    t.slot_duration_s = j.value("slot_duration_s", t.slot_duration_s);
}

inline void from_json_into(const nlohmann::json& j, ChannelParams& c) {
    c.rb_bandwidth_hz = j.value("rb_bandwidth_hz", c.rb_bandwidth_hz);
    c.noise_psd_w_per_hz = j.value("noise_psd_w_per_hz", c.noise_psd_w_per_hz);
    c.waterfall_m_db = j.value("waterfall_m_db", c.waterfall_m_db);
    c.fading_mean = j.value("fading_mean", c.fading_mean);
}

inline void from_json_into(const nlohmann::json& j, AgentConfig& a) {
    a.gamma = j.value("gamma", a.gamma);
    a.gamma_c = j.value("gamma_c", a.gamma_c);
    a.alpha_init = j.value("alpha_init", a.alpha_init);
    a.lr_q = j.value("lr_q", a.lr_q);
    a.lr_pi = j.value("lr_pi", a.lr_pi);
    a.lr_alpha = j.value("lr_alpha", a.lr_alpha);
    a.lr_lambda = j.value("lr_lambda", a.lr_lambda);
    a.rho = j.value("rho", a.rho);
    a.actor_every = j.value("actor_every", a.actor_every);
    a.lambda_every = j.value("lambda_every", a.lambda_every);
    a.lambda_irm = j.value("lambda_irm", a.lambda_irm);
    a.batch_size = j.value("batch_size", a.batch_size);
    a.relax_temp = j.value("relax_temp", a.relax_temp);
    a.relax_temp_final = j.value("relax_temp_final", a.relax_temp_final);
    a.target_entropy = j.value("target_entropy", a.target_entropy);
    a.staleness_scale = j.value("staleness_scale", a.staleness_scale);
    a.soft_target_entropy = j.value("soft_target_entropy", a.soft_target_entropy);
    a.hidden = j.value("hidden", a.hidden);
    a.grad_steps_per_episode = j.value("grad_steps_per_episode", a.grad_steps_per_episode);
    a.mtr.n_sub = j.value("mtr_n_sub", a.mtr.n_sub);
    a.mtr.sub_capacity = j.value("mtr_sub_capacity", a.mtr.sub_capacity);
    a.mtr.promote_prob = j.value("mtr_promote_prob", a.mtr.promote_prob);
    a.mtr.total_cap = j.value("mtr_total_cap", a.mtr.total_cap);
}

inline ExperimentConfig load_experiment_config(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.scenario = j.value("scenario", cfg.scenario);
    if (j.contains("fleet")) from_json_into(j["fleet"], cfg.fleet);
    if (j.contains("traces")) from_json_into(j["traces"], cfg.traces);
    if (j.contains("channel")) from_json_into(j["channel"], cfg.channel);
    if (j.contains("agent")) from_json_into(j["agent"], cfg.agent);
    cfg.rb_budget = j.value("rb_budget", cfg.rb_budget);
    if (j.contains("budget_schedule")) {
        cfg.budget_schedule.clear();
        for (const auto& row : j["budget_schedule"])
            cfg.budget_schedule.push_back({row.at(0).get<int>(), row.at(1).get<int>()});
    }
    cfg.episodes = j.value("episodes", cfg.episodes);
    cfg.slots_per_episode = j.value("slots_per_episode", cfg.slots_per_episode);
    cfg.eval_episodes = j.value("eval_episodes", cfg.eval_episodes);
    cfg.seeds = j.value("seeds", cfg.seeds);
    cfg.out_dir = j.value("out_dir", cfg.out_dir);
    cfg.sweep_budgets = j.value("sweep_budgets", cfg.sweep_budgets);
    cfg.scaling_devices = j.value("scaling_devices", cfg.scaling_devices);
    cfg.scaling_budget = j.value("scaling_budget", cfg.scaling_budget);
    cfg.consumption_budgets = j.value("consumption_budgets", cfg.consumption_budgets);
    cfg.period_candidates = j.value("period_candidates", cfg.period_candidates);
    cfg.threads = j.value("threads", cfg.threads);
    return cfg;
}

inline ExperimentConfig load_experiment_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path);
    nlohmann::json j;
    in >> j;
    return load_experiment_config(j);
}

// --- fleet and environment construction --------------------------------------

/// Device fleet with the priority split and block costs of the three kinds.
/// Distances are drawn once per run seed, not per episode.
inline std::vector<DeviceProfile> build_fleet(const ExperimentConfig& cfg, std::uint64_t run_seed) {
    const FleetSpec& f = cfg.fleet;
    const int n = f.total_devices();
    const double w_t = std::isnan(f.w_thermo) ? 3.0 / n : f.w_thermo;
    const double w_h = std::isnan(f.w_hygro) ? 2.0 / n : f.w_hygro;
    const double w_p = std::isnan(f.w_positioning) ? 1.0 / n : f.w_positioning;

    Rng rng(derive_seed(run_seed, 0xF1EE7));
    std::vector<DeviceProfile> fleet;
    fleet.reserve(n);
    for (int i = 0; i < n; ++i) {
        DeviceProfile p;
        p.id = i;
        if (i < f.n_thermo) {
            p.kind = DeviceKind::thermo_hygro;
            p.priority_w = w_t;
            p.rb_cost_b = f.b_thermo;
        } else if (i < f.n_thermo + f.n_hygro) {
            p.kind = DeviceKind::thermo_hygro;
            p.priority_w = w_h;
            p.rb_cost_b = f.b_hygro;
        } else {
            p.kind = DeviceKind::positioning;
            p.priority_w = w_p;
            p.rb_cost_b = f.b_positioning;
        }
        p.threshold_xi = f.threshold_xi;
        p.payload_bits = f.payload_bits;
        p.tx_power_w = f.tx_power_w;
        p.distance_m = rng.uniform(f.dist_min_m, f.dist_max_m);
        fleet.push_back(p);
    }
    return fleet;
}

inline std::vector<PhysicalTrace> build_traces(const ExperimentConfig& cfg,
                                               const std::vector<DeviceProfile>& fleet,
                                               std::size_t length, std::uint64_t episode_seed) {
    const TraceParams& tp = cfg.traces;
    std::vector<PhysicalTrace> traces;
    traces.reserve(fleet.size());
    for (const auto& p : fleet) {
        const std::uint64_t dev_seed = derive_seed(episode_seed, static_cast<std::uint64_t>(p.id));
        PhysicalTrace t;
        if (p.kind == DeviceKind::thermo_hygro) {
            const bool hygro = p.id >= cfg.fleet.n_thermo &&
                               p.id < cfg.fleet.n_thermo + cfg.fleet.n_hygro;
            const double base = (hygro ? tp.hygro_base : tp.thermo_base) +
                                tp.base_spread * (p.id % 5);
            t = generate_scalar_trace(dev_seed, length, base, tp.walk_sigma, tp.jump_prob,
                                      tp.jump_scale, tp.slot_duration_s);
        } else {
            // Per-device patrol rectangle, offset so fleets do not overlap.
            const double off = 1.5 * tp.area_side * (p.id % 7);
            const double s = tp.area_side;
            const std::vector<State> loop{{off, 0.0}, {off + s, 0.0}, {off + s, s}, {off, s}};
            t = generate_trajectory_trace(dev_seed, length, loop, tp.positioning_speed,
                                          tp.slot_duration_s);
        }
        t.device_id = p.id;
        traces.push_back(std::move(t));
    }
    return traces;
}

/// Episode factory: fresh traces per episode (a continually varying physical
/// world), deterministic in (run seed, episode index).
inline EnvFactory make_env_factory(const ExperimentConfig& cfg,
                                   const std::vector<DeviceProfile>& fleet, int rb_budget,
                                   std::uint64_t run_seed, std::uint64_t episode_salt = 0) {
    return [cfg, fleet, rb_budget, run_seed, episode_salt](std::uint64_t episode) {
        const std::uint64_t ep_seed = derive_seed(run_seed, episode_salt + 17 * (episode + 1));
        auto traces = build_traces(cfg, fleet, static_cast<std::size_t>(cfg.slots_per_episode) + 1,
                                   ep_seed);
        return TwinEnv(fleet, std::move(traces), cfg.channel, rb_budget,
                       derive_seed(ep_seed, 0xC4A27));
    };
}

// --- policy evaluation --------------------------------------------------------

using SchedulerFn = std::function<Action(const Observation& obs, long slot, int rb_budget)>;

struct EvalMetrics {
    double weighted_mismatch = 0.0;
    double nrmse_mean = 0.0;
    double rb_mean = 0.0;
    double violation_rate = 0.0;
    std::map<long, long> rb_histogram;  // instantaneous consumed blocks -> slot count
};

/// Rolls a scheduler over held-out episodes and aggregates the truth-side
/// metrics.
inline EvalMetrics evaluate_scheduler(const ExperimentConfig& cfg,
                                      const std::vector<DeviceProfile>& fleet, int rb_budget,
                                      std::uint64_t run_seed, const SchedulerFn& scheduler) {
    EnvFactory factory = make_env_factory(cfg, fleet, rb_budget, run_seed, 0x0E7A1u);
    std::vector<double> weights;
    for (const auto& p : fleet) weights.push_back(p.priority_w);

    EvalMetrics m;
    double wm_sum = 0.0, nrmse_sum = 0.0;
    long slots_total = 0, violations = 0;
    double load_sum = 0.0;
    int nrmse_count = 0;

    for (int ep = 0; ep < cfg.eval_episodes; ++ep) {
        TwinEnv env = factory(static_cast<std::uint64_t>(ep));
        std::vector<std::vector<double>> mismatch_rows;
        std::vector<std::vector<State>> phys(fleet.size()), virt(fleet.size());
        bool done = false;
        long slot = 0;
        while (!done) {
            Action a = scheduler(env.observation(), slot, rb_budget);
            long load = 0;
            for (std::size_t i = 0; i < fleet.size(); ++i)
                if (a.schedule[i]) load += fleet[i].rb_cost_b;
            StepOutcome out = env.step(a);
            mismatch_rows.push_back(env.truth().mismatch);
            for (std::size_t i = 0; i < fleet.size(); ++i) {
                phys[i].push_back(env.truth().physical[i]);
                virt[i].push_back(env.truth().virtual_state[i]);
            }
            ++m.rb_histogram[load];
            load_sum += static_cast<double>(load);
            if (load > rb_budget) ++violations;
            ++slots_total;
            ++slot;
            done = out.episode_end;
        }
        wm_sum += weighted_mismatch(mismatch_rows, weights);
        for (std::size_t i = 0; i < fleet.size(); ++i) {
            nrmse_sum += nrmse(phys[i], virt[i], fleet[i].kind == DeviceKind::positioning);
            ++nrmse_count;
        }
    }
    m.weighted_mismatch = wm_sum / cfg.eval_episodes;
    m.nrmse_mean = nrmse_sum / nrmse_count;
    m.rb_mean = load_sum / static_cast<double>(slots_total);
    m.violation_rate = static_cast<double>(violations) / static_cast<double>(slots_total);
    return m;
}

inline SchedulerFn make_agent_scheduler(const MtrSacAgent& agent, std::uint64_t eval_seed) {
    auto rng = std::make_shared<Rng>(derive_seed(eval_seed, 0xAC7));
    return [&agent, rng](const Observation& obs, long, int) {
        return agent.select_action(obs, ActMode::sample, *rng);
    };
}

inline SchedulerFn make_polling_scheduler(const std::vector<DeviceProfile>& fleet) {
    auto pointer = std::make_shared<int>(0);
    return [fleet, pointer](const Observation&, long, int rb_budget) {
        return polling_schedule(fleet, rb_budget, *pointer);
    };
}

/// Fits the fixed-interval plan on a statistics rollout drawn from the same
/// trace distribution, then replays it open loop.
inline SchedulerFn make_fixed_interval_scheduler(const ExperimentConfig& cfg,
                                                 const std::vector<DeviceProfile>& fleet,
                                                 int rb_budget, std::uint64_t run_seed) {
    auto stats_traces = build_traces(cfg, fleet, static_cast<std::size_t>(cfg.slots_per_episode) + 1,
                                     derive_seed(run_seed, 0x57A75));
    const std::vector<double> stats = measure_change_stats(stats_traces);
    FixedIntervalPlan plan = fixed_interval_schedule(fleet, rb_budget, stats, cfg.period_candidates);
    auto sched = std::make_shared<FixedIntervalScheduler>(fleet, std::move(plan), stats);
    return [sched](const Observation&, long slot, int rb_budget_now) {
        return sched->schedule(slot, rb_budget_now);
    };
}

// --- training drivers ----------------------------------------------------------

/// Trains an MTR-SAC agent at one fixed budget and returns (agent, report).
inline std::pair<MtrSacAgent, TrainingReport> train_crl(const ExperimentConfig& cfg,
                                                        const std::vector<DeviceProfile>& fleet,
                                                        int rb_budget, std::uint64_t run_seed,
                                                        bool plain_sac = false) {
    AgentConfig acfg = cfg.agent;
    acfg.n_devices = static_cast<int>(fleet.size());
    if (plain_sac) {
        acfg.lambda_irm = 0.0;
        acfg.mtr.n_sub = 1;
        acfg.mtr.sub_capacity = acfg.mtr.total_cap;
    }
    MtrSacAgent agent(acfg, derive_seed(run_seed, 0xA93E7));
    EnvFactory factory = make_env_factory(cfg, fleet, rb_budget, run_seed);
    TrainingReport report = agent.train(factory, cfg.episodes, cfg.slots_per_episode,
                                        cfg.budget_schedule, derive_seed(run_seed, 0x7EA1));
    return {std::move(agent), std::move(report)};
}

/// Runs jobs 0..count-1 over a small thread pool; each job writes only its
/// own slot of the result storage, so the output is order-deterministic.
inline void parallel_for_jobs(int count, int threads, const std::function<void(int)>& job) {
    if (threads <= 1 || count <= 1) {
        for (int i = 0; i < count; ++i) job(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    const int width = std::min(threads, count);
    pool.reserve(width);
    for (int t = 0; t < width; ++t) {
        pool.emplace_back([&]() {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) job(i);
        });
    }
    for (auto& th : pool) th.join();
}

// --- report files ----------------------------------------------------------------

inline void ensure_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << content;
}

inline void write_report_json(const std::string& path, const nlohmann::json& j) {
    write_text_file(path, j.dump(2) + "\n");
}

struct ConvergenceResult {
    // curves indexed [variant][seed] with variant 0 = mtr_sac, 1 = plain sac
    std::vector<std::vector<TrainingReport>> curves;
    nlohmann::json report;
};

/// Recovery statistics of one stage: episodes until the smoothed reward
/// climbs back to dip + 0.9 (plateau - dip), plus the post-change variance.
struct StageRecovery {
    int recovery_episodes = 0;
    double post_change_variance = 0.0;
    double plateau = 0.0;
};

inline std::vector<double> moving_average(const std::vector<double>& x, int window) {
    std::vector<double> out(x.size(), 0.0);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        acc += x[i];
        if (i >= static_cast<std::size_t>(window)) acc -= x[i - window];
        out[i] = acc / std::min<std::size_t>(i + 1, window);
    }
    return out;
}

inline StageRecovery stage_recovery_stats(const std::vector<double>& episode_reward, int stage_begin,
                                          int stage_end, int smooth_window = 5,
                                          int variance_window = 15) {
    StageRecovery r;
    const int len = stage_end - stage_begin;
    std::vector<double> stage(episode_reward.begin() + stage_begin,
                              episode_reward.begin() + stage_end);
    const std::vector<double> smooth = moving_average(stage, smooth_window);
    const int tail = std::max(1, len / 4);
    double plateau = 0.0;
    for (int e = len - tail; e < len; ++e) plateau += smooth[e];
    plateau /= tail;
    r.plateau = plateau;

    double dip = smooth[0];
    for (int e = 0; e < std::max(1, len / 4); ++e) dip = std::min(dip, smooth[e]);
    const double threshold = dip + 0.9 * (plateau - dip);
    r.recovery_episodes = len;
    for (int e = 0; e < len; ++e) {
        if (smooth[e] >= threshold) {
            r.recovery_episodes = e;
            break;
        }
    }
    const int vw = std::min(variance_window, len);
    double mean = 0.0;
    for (int e = 0; e < vw; ++e) mean += stage[e];
    mean /= vw;
    for (int e = 0; e < vw; ++e) r.post_change_variance += (stage[e] - mean) * (stage[e] - mean);
    r.post_change_variance /= vw;
    return r;
}

/// Budget-stage study: trains the full agent and the no-MTR ablation across
/// the stage schedule and emits per-episode curves plus recovery statistics.
inline ConvergenceResult run_convergence_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg.out_dir);
    const int n_seeds = static_cast<int>(cfg.seeds.size());

    ConvergenceResult result;
    result.curves.assign(2, std::vector<TrainingReport>(n_seeds));
    parallel_for_jobs(2 * n_seeds, cfg.threads, [&](int job) {
        const int variant = job / n_seeds;
        const int s = job % n_seeds;
        ExperimentConfig run_cfg = cfg;
        auto fleet = build_fleet(run_cfg, cfg.seeds[s]);
        auto [agent, report] =
            train_crl(run_cfg, fleet, cfg.rb_budget, cfg.seeds[s], variant == 1);
        result.curves[variant][s] = std::move(report);
    });

    std::string csv = "episode,variant,seed,reward,cost,violation_rate,weighted_mismatch\n";
    const char* names[2] = {"mtr_sac", "sac"};
    for (int v = 0; v < 2; ++v) {
        for (int s = 0; s < n_seeds; ++s) {
            const TrainingReport& rep = result.curves[v][s];
            for (std::size_t e = 0; e < rep.episode_reward.size(); ++e) {
                csv += std::to_string(e) + ',' + names[v] + ',' + std::to_string(cfg.seeds[s]) +
                       ',' + detail::format_double(rep.episode_reward[e]) + ',' +
                       detail::format_double(rep.episode_cost[e]) + ',' +
                       detail::format_double(rep.episode_violation_rate[e]) + ',' +
                       detail::format_double(rep.episode_weighted_mismatch[e]) + '\n';
            }
        }
    }
    write_text_file(cfg.out_dir + "/curves.csv", csv);

    // Post-change recovery per stage boundary.
    nlohmann::json report;
    report["scenario"] = cfg.scenario;
    report["budget_schedule"] = nlohmann::json::array();
    for (const auto& c : cfg.budget_schedule)
        report["budget_schedule"].push_back({c.episode, c.rb_budget});
    for (int v = 0; v < 2; ++v) {
        for (int s = 0; s < n_seeds; ++s) {
            const TrainingReport& rep = result.curves[v][s];
            nlohmann::json run;
            run["variant"] = names[v];
            run["seed"] = cfg.seeds[s];
            run["stage_plateau_reward"] = rep.stage_plateau_reward;
            run["budget_change_episodes"] = nlohmann::json::array();
            for (const auto& c : rep.budget_changes)
                run["budget_change_episodes"].push_back(c.episode);
            std::vector<int> bounds{0};
            for (const auto& c : rep.budget_changes)
                if (c.episode != 0) bounds.push_back(c.episode);
            bounds.push_back(static_cast<int>(rep.episode_reward.size()));
            for (std::size_t b = 0; b + 1 < bounds.size(); ++b) {
                StageRecovery rec =
                    stage_recovery_stats(rep.episode_reward, bounds[b], bounds[b + 1]);
                run["stages"].push_back({{"begin", bounds[b]},
                                         {"end", bounds[b + 1]},
                                         {"recovery_episodes", rec.recovery_episodes},
                                         {"post_change_variance", rec.post_change_variance},
                                         {"plateau", rec.plateau}});
            }
            report["runs"].push_back(run);
        }
    }
    result.report = report;
    write_report_json(cfg.out_dir + "/report.json", report);
    return result;
}

struct SweepCell {
    int budget = 0;
    std::string scheduler;
    std::uint64_t seed = 0;
    EvalMetrics metrics;
};

/// Budget sweep: per budget and seed, a trained policy and the two baselines
/// are evaluated on held-out episodes.
inline std::vector<SweepCell> run_budget_sweep(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg.out_dir);
    const int n_seeds = static_cast<int>(cfg.seeds.size());
    const int n_m = static_cast<int>(cfg.sweep_budgets.size());

    std::vector<std::vector<SweepCell>> cells(n_m * n_seeds);
    parallel_for_jobs(n_m * n_seeds, cfg.threads, [&](int job) {
        const int mi = job / n_seeds;
        const int s = job % n_seeds;
        const int budget = cfg.sweep_budgets[mi];
        const std::uint64_t seed = cfg.seeds[s];
        auto fleet = build_fleet(cfg, seed);

        auto [agent, report] = train_crl(cfg, fleet, budget, seed);
        SweepCell crl{budget, "crl", seed,
                      evaluate_scheduler(cfg, fleet, budget, seed,
                                         make_agent_scheduler(agent, derive_seed(seed, budget)))};
        SweepCell dp{budget, "dp", seed,
                     evaluate_scheduler(cfg, fleet, budget, seed,
                                        make_fixed_interval_scheduler(cfg, fleet, budget, seed))};
        SweepCell poll{budget, "polling", seed,
                       evaluate_scheduler(cfg, fleet, budget, seed, make_polling_scheduler(fleet))};
        cells[job] = {std::move(crl), std::move(dp), std::move(poll)};
    });

    std::vector<SweepCell> flat;
    std::string csv = "M,scheduler,seed,weighted_mismatch,nrmse,rb_mean\n";
    for (const auto& group : cells) {
        for (const auto& cell : group) {
            csv += std::to_string(cell.budget) + ',' + cell.scheduler + ',' +
                   std::to_string(cell.seed) + ',' +
                   detail::format_double(cell.metrics.weighted_mismatch) + ',' +
                   detail::format_double(cell.metrics.nrmse_mean) + ',' +
                   detail::format_double(cell.metrics.rb_mean) + '\n';
            flat.push_back(cell);
        }
    }
    write_text_file(cfg.out_dir + "/sweep.csv", csv);

    nlohmann::json report;
    report["scenario"] = cfg.scenario;
    for (int mi = 0; mi < n_m; ++mi) {
        for (const std::string& sched : {"crl", "dp", "polling"}) {
            std::vector<double> wm, nr;
            for (const auto& cell : flat)
                if (cell.budget == cfg.sweep_budgets[mi] && cell.scheduler == sched) {
                    wm.push_back(cell.metrics.weighted_mismatch);
                    nr.push_back(cell.metrics.nrmse_mean);
                }
            auto mean = [](const std::vector<double>& v) {
                return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
            };
            auto stderr_of = [&](const std::vector<double>& v) {
                if (v.size() < 2) return 0.0;
                const double m = mean(v);
                double var = 0.0;
                for (double x : v) var += (x - m) * (x - m);
                return std::sqrt(var / (v.size() - 1) / v.size());
            };
            report["cells"].push_back({{"M", cfg.sweep_budgets[mi]},
                                       {"scheduler", sched},
                                       {"weighted_mismatch_mean", mean(wm)},
                                       {"weighted_mismatch_stderr", stderr_of(wm)},
                                       {"nrmse_mean", mean(nr)},
                                       {"nrmse_stderr", stderr_of(nr)}});
        }
    }
    write_report_json(cfg.out_dir + "/report.json", report);
    return flat;
}

/// Fleet-size sweep at a fixed budget with unit block costs, proportional
/// kind mix.
inline std::vector<SweepCell> run_device_scaling(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg.out_dir);
    const int n_seeds = static_cast<int>(cfg.seeds.size());
    const int n_n = static_cast<int>(cfg.scaling_devices.size());

    std::vector<std::vector<SweepCell>> cells(n_n * n_seeds);
    parallel_for_jobs(n_n * n_seeds, cfg.threads, [&](int job) {
        const int ni = job / n_seeds;
        const int s = job % n_seeds;
        const int n_devices = cfg.scaling_devices[ni];
        const std::uint64_t seed = cfg.seeds[s];

        ExperimentConfig run_cfg = cfg;
        run_cfg.fleet.n_positioning = std::max(1, n_devices / 5);
        run_cfg.fleet.n_thermo = (n_devices - run_cfg.fleet.n_positioning + 1) / 2;
        run_cfg.fleet.n_hygro = n_devices - run_cfg.fleet.n_positioning - run_cfg.fleet.n_thermo;
        run_cfg.fleet.b_thermo = run_cfg.fleet.b_hygro = run_cfg.fleet.b_positioning = 1;
        auto fleet = build_fleet(run_cfg, seed);

        auto [agent, report] = train_crl(run_cfg, fleet, cfg.scaling_budget, seed);
        SweepCell crl{n_devices, "crl", seed,
                      evaluate_scheduler(run_cfg, fleet, cfg.scaling_budget, seed,
                                         make_agent_scheduler(agent, derive_seed(seed, 0xD0)))};
        SweepCell dp{n_devices, "dp", seed,
                     evaluate_scheduler(run_cfg, fleet, cfg.scaling_budget, seed,
                                        make_fixed_interval_scheduler(run_cfg, fleet,
                                                                      cfg.scaling_budget, seed))};
        SweepCell poll{n_devices, "polling", seed,
                       evaluate_scheduler(run_cfg, fleet, cfg.scaling_budget, seed,
                                          make_polling_scheduler(fleet))};
        cells[job] = {std::move(crl), std::move(dp), std::move(poll)};
    });

    std::vector<SweepCell> flat;
    std::string csv = "N,scheduler,seed,weighted_mismatch,nrmse,rb_mean\n";
    for (const auto& group : cells) {
        for (const auto& cell : group) {
            csv += std::to_string(cell.budget) + ',' + cell.scheduler + ',' +
                   std::to_string(cell.seed) + ',' +
                   detail::format_double(cell.metrics.weighted_mismatch) + ',' +
                   detail::format_double(cell.metrics.nrmse_mean) + ',' +
                   detail::format_double(cell.metrics.rb_mean) + '\n';
            flat.push_back(cell);
        }
    }
    write_text_file(cfg.out_dir + "/scaling.csv", csv);

    nlohmann::json report;
    report["scenario"] = cfg.scenario;
    report["scaling_budget"] = cfg.scaling_budget;
    for (const auto& cell : flat)
        report["cells"].push_back({{"N", cell.budget},
                                   {"scheduler", cell.scheduler},
                                   {"seed", cell.seed},
                                   {"weighted_mismatch", cell.metrics.weighted_mismatch},
                                   {"nrmse", cell.metrics.nrmse_mean}});
    write_report_json(cfg.out_dir + "/report.json", report);
    return flat;
}

struct ConsumptionResult {
    int budget = 0;
    std::uint64_t seed = 0;
    EvalMetrics metrics;
};

/// Instantaneous block-consumption distribution of trained policies.
inline std::vector<ConsumptionResult> run_consumption_distribution(const ExperimentConfig& cfg) {
    cfg.validate();
    ensure_out_dir(cfg.out_dir);
    const int n_seeds = static_cast<int>(cfg.seeds.size());
    const int n_m = static_cast<int>(cfg.consumption_budgets.size());

    std::vector<ConsumptionResult> results(n_m * n_seeds);
    parallel_for_jobs(n_m * n_seeds, cfg.threads, [&](int job) {
        const int mi = job / n_seeds;
        const int s = job % n_seeds;
        const int budget = cfg.consumption_budgets[mi];
        const std::uint64_t seed = cfg.seeds[s];
        auto fleet = build_fleet(cfg, seed);
        auto [agent, report] = train_crl(cfg, fleet, budget, seed);
        results[job] = {budget, seed,
                        evaluate_scheduler(cfg, fleet, budget, seed,
                                           make_agent_scheduler(agent, derive_seed(seed, budget)))};
    });

    std::map<int, std::map<long, long>> merged;
    for (const auto& r : results)
        for (const auto& [load, count] : r.metrics.rb_histogram) merged[r.budget][load] += count;

    std::string csv = "M,rb_used,count\n";
    for (const auto& [budget, hist] : merged)
        for (const auto& [load, count] : hist)
            csv += std::to_string(budget) + ',' + std::to_string(load) + ',' +
                   std::to_string(count) + '\n';
    write_text_file(cfg.out_dir + "/hist.csv", csv);

    nlohmann::json report;
    report["scenario"] = cfg.scenario;
    for (const auto& r : results)
        report["runs"].push_back({{"M", r.budget},
                                  {"seed", r.seed},
                                  {"violation_rate", r.metrics.violation_rate},
                                  {"rb_mean", r.metrics.rb_mean}});
    write_report_json(cfg.out_dir + "/report.json", report);
    return results;
}

// --- oracle drivers ---------------------------------------------------------------

/// Random-instance Theorem-1 check plus the constructed instance separating
/// state-wise from expectation-wise feasibility.
inline nlohmann::json run_cmdp_oracle(std::uint64_t seed, int instances, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    nlohmann::json report;
    Rng rng(derive_seed(seed, 0x0C3D9));
    double worst_gap = 0.0;
    for (int i = 0; i < instances; ++i) {
        TinyCmdp mdp = random_tiny_cmdp(rng, 2 + static_cast<int>(rng.below(3)),
                                        2 + static_cast<int>(rng.below(2)));
        CmdpSolution sol = brute_force_cmdp(mdp);
        const double gap = std::abs(sol.dual_value - sol.primal_value);
        worst_gap = std::max(worst_gap, gap);
        report["instances"].push_back({{"feasible", sol.feasible},
                                       {"primal", sol.primal_value},
                                       {"dual", sol.dual_value},
                                       {"gap", gap},
                                       {"policies", sol.policies_enumerated}});
    }
    report["worst_gap"] = worst_gap;

    // Hand-built separation: from state 0 the constraint holds on average,
    // but state 1 carries cost above budget, so the state-wise filter
    // rejects what the expectation filter accepts.
    TinyCmdp sep;
    sep.n_states = 2;
    sep.n_actions = 2;
    sep.discount = 0.9;
    sep.init_dist = {0.9, 0.1};
    sep.transition = {{{0.95, 0.05}, {1.0, 0.0}}, {{1.0, 0.0}, {1.0, 0.0}}};
    sep.objective = {{0.0, 1.0}, {0.2, 1.0}};
    sep.constraint_cost = {{1.0, 0.2}, {9.0, 0.2}};
    sep.budget = 14.0;
    CmdpSolution sep_sol = brute_force_cmdp(sep);
    std::vector<int> risky{0, 0};
    const std::vector<double> vc = policy_value(sep, risky, sep.constraint_cost);
    double vc_init = 0.0;
    for (int s = 0; s < 2; ++s) vc_init += sep.init_dist[s] * vc[s];
    bool statewise_violated = false;
    for (int s = 0; s < 2; ++s) statewise_violated = statewise_violated || vc[s] > sep.budget;
    report["separation"] = {{"expectation_value", vc_init},
                            {"budget", sep.budget},
                            {"expectation_ok", vc_init <= sep.budget},
                            {"statewise_violated", statewise_violated},
                            {"statewise_optimum", sep_sol.primal_value},
                            {"expectation_optimum", sep_sol.expectation_primal}};
    write_report_json(out_dir + "/report.json", report);
    return report;
}

inline nlohmann::json run_spi_oracle(std::uint64_t seed, int instances, const std::string& out_dir) {
    ensure_out_dir(out_dir);
    nlohmann::json report;
    Rng rng(derive_seed(seed, 0x5A1D));
    for (int i = 0; i < instances; ++i) {
        TinyMdp mdp;
        mdp.n_states = 3;
        mdp.n_actions = 2;
        mdp.discount = 0.9;
        mdp.transition.assign(3, std::vector<std::vector<double>>(2, std::vector<double>(3, 0.0)));
        mdp.reward.assign(3, std::vector<double>(2, 0.0));
        for (int s = 0; s < 3; ++s)
            for (int a = 0; a < 2; ++a) {
                double z = 0.0;
                for (int s2 = 0; s2 < 3; ++s2) {
                    mdp.transition[s][a][s2] = 0.05 + rng.uniform();
                    z += mdp.transition[s][a][s2];
                }
                for (int s2 = 0; s2 < 3; ++s2) mdp.transition[s][a][s2] /= z;
                mdp.reward[s][a] = rng.uniform(-1.0, 1.0);
            }
        SoftPolicyIterationResult res = tabular_soft_policy_iteration(mdp, 0.2);
        double worst_drop = 0.0;
        for (std::size_t k = 1; k < res.q_iterates.size(); ++k)
            for (int s = 0; s < 3; ++s)
                for (int a = 0; a < 2; ++a)
                    worst_drop = std::min(worst_drop,
                                          res.q_iterates[k][s][a] - res.q_iterates[k - 1][s][a]);
        report["instances"].push_back({{"iterations", res.iterations},
                                       {"converged", res.converged},
                                       {"worst_monotonicity_drop", worst_drop}});
    }
    write_report_json(out_dir + "/report.json", report);
    return report;
}

}  // namespace dtsync
