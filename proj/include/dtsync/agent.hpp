#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dtsync/approx.hpp"
#include "dtsync/replay.hpp"
#include "dtsync/rng.hpp"
#include "dtsync/twin_env.hpp"

namespace dtsync {

struct AgentConfig {
    int n_devices = 20;

    double gamma = 0.99;    // reward discount
    double gamma_c = 0.99;  // cost discount
    double alpha_init = 0.2;

    double lr_q = 3e-4;
    double lr_pi = 3e-4;
    double lr_alpha = 1e-5;
    double lr_lambda = 1e-5;
    double rho = 5e-3;  // target blend rate

    int actor_every = 2;     // actor + temperature update period, in gradient steps
    int lambda_every = 12;   // multiplier update period, in gradient steps
    double lambda_irm = 1e-2;

    int batch_size = 256;
    double relax_temp = 1.0;        // initial Gumbel-sigmoid temperature
    double relax_temp_final = 0.5;  // annealed linearly over training
    double target_entropy = std::numeric_limits<double>::quiet_NaN();  // NaN -> 0.4 * N * ln 2
    double staleness_scale = 100.0;  // staleness feature divisor
    bool soft_target_entropy = true; // include -alpha*log pi in critic targets

    std::vector<int> hidden = {256, 256, 256};
    MtrConfig mtr;

    int grad_steps_per_episode = 64;
    std::string diagnostics_dir = ".";

    void validate() const {
        if (n_devices < 1) throw std::invalid_argument("AgentConfig: n_devices must be >= 1");
        if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("AgentConfig: gamma in (0,1)");
        if (!(gamma_c > 0.0 && gamma_c < 1.0))
            throw std::invalid_argument("AgentConfig: gamma_c in (0,1)");
        if (!(lr_q > 0.0 && lr_pi > 0.0 && lr_alpha > 0.0 && lr_lambda > 0.0))
            throw std::invalid_argument("AgentConfig: learning rates must be positive");
        if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("AgentConfig: rho in (0,1]");
        if (actor_every < 1 || lambda_every < 1)
            throw std::invalid_argument("AgentConfig: update periods must be >= 1");
        if (lambda_irm < 0.0) throw std::invalid_argument("AgentConfig: lambda_irm must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("AgentConfig: batch_size must be >= 1");
        if (!(relax_temp > 0.0) || !(relax_temp_final > 0.0))
            throw std::invalid_argument("AgentConfig: relax temperatures must be positive");
        mtr.validate();
    }

    double resolved_target_entropy() const {
        if (std::isnan(target_entropy)) return 0.4 * n_devices * std::log(2.0);
        return target_entropy;
    }
};

/// The five learned functions plus target copies of the four Algorithm-1
/// blend targets. The actor emits one logit per device; critics map
/// (state, action) to a scalar; the multiplier maps state to a nonnegative
/// scalar through softplus.
struct AgentNets {
    Mlp actor, q1, q2, qc, multiplier;
    Mlp actor_target, q1_target, q2_target, qc_target;

    static AgentNets create(const AgentConfig& cfg, Rng& rng) {
        const int n = cfg.n_devices;
        const int obs_dim = 3 * n;
        std::vector<int> actor_dims{obs_dim};
        std::vector<int> critic_dims{obs_dim + n};
        std::vector<int> mult_dims{obs_dim};
        for (int h : cfg.hidden) {
            actor_dims.push_back(h);
            critic_dims.push_back(h);
            mult_dims.push_back(h);
        }
        actor_dims.push_back(n);
        critic_dims.push_back(1);
        mult_dims.push_back(1);

        AgentNets nets;
        nets.actor = Mlp::create(actor_dims, OutputTransform::logits, rng);
        nets.q1 = Mlp::create(critic_dims, OutputTransform::identity, rng);
        nets.q2 = Mlp::create(critic_dims, OutputTransform::identity, rng);
        nets.qc = Mlp::create(critic_dims, OutputTransform::identity, rng);
        nets.multiplier = Mlp::create(mult_dims, OutputTransform::softplus, rng);
        nets.multiplier.biases.back()[0] = -3.0;  // start with a small multiplier
        nets.actor_target = nets.actor;
        nets.q1_target = nets.q1;
        nets.q2_target = nets.q2;
        nets.qc_target = nets.qc;
        return nets;
    }
};

/// Scaled feature vector [phi/scale, y, gamma] per device, the exact input
/// the policy and critics see at both training and act time.
inline std::vector<double> flatten_observation(const Observation& obs, double staleness_scale) {
    std::vector<double> flat;
    flat.reserve(3 * obs.staleness_phi.size());
    for (std::size_t i = 0; i < obs.staleness_phi.size(); ++i) {
        flat.push_back(static_cast<double>(obs.staleness_phi[i]) / staleness_scale);
        flat.push_back(obs.last_mismatch_y[i]);
        flat.push_back(static_cast<double>(obs.last_gamma[i]));
    }
    return flat;
}

// --- factorized Bernoulli policy math ---------------------------------------

/// log pi(a | logits) for a factorized Bernoulli policy. Entries of `action`
/// may be fractional (relaxed samples); the hard-Bernoulli likelihood formula
/// is evaluated either way.
inline double bernoulli_log_prob(const std::vector<double>& logits,
                                 const std::vector<double>& action) {
    double lp = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        lp += -action[i] * softplus(-logits[i]) - (1.0 - action[i]) * softplus(logits[i]);
    return lp;
}

/// Sum of per-device Bernoulli entropies at the given logits.
inline double bernoulli_entropy_sum(const std::vector<double>& logits) {
    double h = 0.0;
    for (double l : logits) {
        const double s = sigmoid(l);
        h += s * softplus(-l) + (1.0 - s) * softplus(l);
    }
    return h;
}

/// Closed-form dummy-scale derivative of the actor loss when a scale w
/// multiplies the policy logits: d/dw J at w=1 is alpha * sum_n l_n (a_n -
/// sigmoid(l_n)).
inline double irm_dummy_scale_grad(const std::vector<double>& logits,
                                   const std::vector<double>& action, double alpha) {
    double g = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i)
        g += logits[i] * (action[i] - sigmoid(logits[i]));
    return alpha * g;
}

enum class ActMode { sample, greedy };

inline Action act(const Mlp& actor, const std::vector<double>& flat_obs, ActMode mode, Rng& rng) {
    const std::vector<double> logits = forward(actor, flat_obs);
    Action a;
    a.schedule.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double p = sigmoid(logits[i]);
        if (mode == ActMode::greedy) {
            a.schedule[i] = p > 0.5 ? 1 : 0;  // tie goes to the cheaper choice
        } else {
            a.schedule[i] = rng.bernoulli(p) ? 1 : 0;
        }
    }
    return a;
}

// --- losses ------------------------------------------------------------------

using Batch = std::vector<MtrBuffer::Sampled>;

namespace detail {

inline std::vector<double> critic_input(const std::vector<double>& obs,
                                        const std::vector<double>& action) {
    std::vector<double> in;
    in.reserve(obs.size() + action.size());
    in.insert(in.end(), obs.begin(), obs.end());
    in.insert(in.end(), action.begin(), action.end());
    return in;
}

inline std::vector<double> to_doubles(const std::vector<std::uint8_t>& a) {
    return std::vector<double>(a.begin(), a.end());
}

}  // namespace detail

struct CriticTargets {
    std::vector<double> y1, y2, yc;
};

/// Bootstrapped targets y_i = r + gamma (Qbar_i(S', a') - alpha log pi(a'|S'))
/// and y_c = c + gamma_C Qbar_C(S', a'), with a' drawn fresh from the current
/// policy. Targets are constants for the critic updates.
inline CriticTargets prepare_critic_targets(const AgentNets& nets, const Batch& batch,
                                            const AgentConfig& cfg, double alpha, Rng& rng) {
    CriticTargets t;
    t.y1.reserve(batch.size());
    t.y2.reserve(batch.size());
    t.yc.reserve(batch.size());
    for (const auto& item : batch) {
        const Experience& e = item.exp;
        const std::vector<double> logits = forward(nets.actor, e.next_obs);
        std::vector<double> a_next(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            a_next[i] = rng.bernoulli(sigmoid(logits[i])) ? 1.0 : 0.0;
        const double log_pi = bernoulli_log_prob(logits, a_next);
        const std::vector<double> in = detail::critic_input(e.next_obs, a_next);
        const double q1t = forward(nets.q1_target, in)[0];
        const double q2t = forward(nets.q2_target, in)[0];
        const double qct = forward(nets.qc_target, in)[0];
        const double ent = cfg.soft_target_entropy ? -alpha * log_pi : 0.0;
        t.y1.push_back(e.reward + cfg.gamma * (q1t + ent));
        t.y2.push_back(e.reward + cfg.gamma * (q2t + ent));
        t.yc.push_back(e.cost + cfg.gamma_c * qct);
    }
    return t;
}

struct ValueLoss {
    double loss = 0.0;
    MlpGradients grads;
};

/// Mean over the batch of 0.5 (Q(S,a) - y)^2 and its exact gradient.
inline ValueLoss td_loss(const Mlp& critic, const Batch& batch, const std::vector<double>& targets) {
    if (batch.empty()) throw std::invalid_argument("td_loss: empty batch");
    if (batch.size() != targets.size()) throw std::invalid_argument("td_loss: target size mismatch");
    ValueLoss out;
    out.grads = MlpGradients::zeros_like(critic);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ForwardTrace trace;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Experience& e = batch[b].exp;
        const std::vector<double> in = detail::critic_input(e.obs, detail::to_doubles(e.action));
        const double q = forward(critic, in, trace)[0];
        const double td = q - targets[b];
        out.loss += 0.5 * td * td * inv_b;
        backward(critic, trace, {td * inv_b}, &out.grads);
    }
    return out;
}

struct TwinCriticLoss {
    double loss1 = 0.0, loss2 = 0.0;
    MlpGradients grads1, grads2;
};

inline TwinCriticLoss critic_loss(const AgentNets& nets, const Batch& batch,
                                  const AgentConfig& cfg, double alpha, Rng& rng) {
    const CriticTargets t = prepare_critic_targets(nets, batch, cfg, alpha, rng);
    TwinCriticLoss out;
    ValueLoss l1 = td_loss(nets.q1, batch, t.y1);
    ValueLoss l2 = td_loss(nets.q2, batch, t.y2);
    out.loss1 = l1.loss;
    out.loss2 = l2.loss;
    out.grads1 = std::move(l1.grads);
    out.grads2 = std::move(l2.grads);
    return out;
}

inline ValueLoss cost_critic_loss(const AgentNets& nets, const Batch& batch,
                                  const AgentConfig& cfg, Rng& rng) {
    const CriticTargets t = prepare_critic_targets(nets, batch, cfg, 0.0, rng);
    return td_loss(nets.qc, batch, t.yc);
}

/// Per-sample logistic noise for the Gumbel-sigmoid relaxation. Prepared
/// separately so a loss evaluation is a deterministic function of the
/// parameters given the noise.
inline std::vector<std::vector<double>> prepare_actor_noise(std::size_t batch_size,
                                                            std::size_t n_devices, Rng& rng) {
    std::vector<std::vector<double>> noise(batch_size, std::vector<double>(n_devices));
    for (auto& row : noise)
        for (double& g : row) g = rng.logistic();
    return noise;
}

struct ActorLossResult {
    double j_sac = 0.0;
    double irm_penalty = 0.0;
    double total = 0.0;
    MlpGradients grads;
    std::vector<double> irm_g;  // dummy-scale gradient per sub-buffer
};

/// Actor objective: per sample alpha log pi(a~|S) - min_i Q_i(S,a~) +
/// lambda(S) (Q_C(S,a~) - cost_threshold), with a~ the Gumbel-sigmoid
/// relaxation of the logits, plus the invariance penalty lambda_IRM sum_i
/// w_i g_i^2 over sub-buffer groups. lambda(S) is treated as a constant;
/// gradients flow through log pi and through the critics' action inputs.
/// `sub_weights` is the occupancy share of each sub-buffer; overflow-tagged
/// samples join the SAC term but no invariance group.
inline ActorLossResult actor_loss(const AgentNets& nets, const Batch& batch,
                                  const std::vector<std::vector<double>>& noise,
                                  const AgentConfig& cfg, double alpha, double temp,
                                  double cost_threshold, const std::vector<double>& sub_weights) {
    if (batch.empty()) throw std::invalid_argument("actor_loss: empty batch");
    if (noise.size() != batch.size()) throw std::invalid_argument("actor_loss: noise size mismatch");
    const std::size_t n = static_cast<std::size_t>(cfg.n_devices);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const int n_sub = static_cast<int>(sub_weights.size());

    ActorLossResult out;
    out.grads = MlpGradients::zeros_like(nets.actor);

    struct SampleScratch {
        ForwardTrace actor_trace;
        std::vector<double> relaxed;   // a~
        std::vector<double> da_dl;     // d a~ / d logit
        std::vector<double> dj_da;     // d J_sac / d a~ (batch-mean folded in)
        std::vector<double> sigma_l;   // sigmoid(logits)
    };
    std::vector<SampleScratch> scratch(batch.size());

    std::vector<double> irm_sum(n_sub, 0.0);
    std::vector<long> irm_count(n_sub, 0);

    MlpGradients unused;  // critics contribute input gradients only
    ForwardTrace critic_trace1, critic_trace2, critic_trace_c, mult_trace;

    for (std::size_t b = 0; b < batch.size(); ++b) {
        SampleScratch& s = scratch[b];
        const Experience& e = batch[b].exp;
        const std::vector<double>& logits = forward(nets.actor, e.obs, s.actor_trace);

        s.relaxed.resize(n);
        s.da_dl.resize(n);
        s.sigma_l.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double rel = sigmoid((logits[i] + noise[b][i]) / temp);
            s.relaxed[i] = rel;
            s.da_dl[i] = rel * (1.0 - rel) / temp;
            s.sigma_l[i] = sigmoid(logits[i]);
        }

        const double log_pi = bernoulli_log_prob(logits, s.relaxed);
        const std::vector<double> in = detail::critic_input(e.obs, s.relaxed);
        const double q1 = forward(nets.q1, in, critic_trace1)[0];
        const double q2 = forward(nets.q2, in, critic_trace2)[0];
        const double qc = forward(nets.qc, in, critic_trace_c)[0];
        const double lambda = forward(nets.multiplier, e.obs, mult_trace)[0];

        const double q_min = std::min(q1, q2);
        out.j_sac += (alpha * log_pi - q_min + lambda * (qc - cost_threshold)) * inv_b;

        // d J_sac / d a~ via the critics' input gradients.
        std::vector<double> in_grad_min, in_grad_c;
        if (q1 <= q2) {
            backward(nets.q1, critic_trace1, {-inv_b}, nullptr, &in_grad_min);
        } else {
            backward(nets.q2, critic_trace2, {-inv_b}, nullptr, &in_grad_min);
        }
        backward(nets.qc, critic_trace_c, {lambda * inv_b}, nullptr, &in_grad_c);

        s.dj_da.resize(n);
        const std::size_t obs_dim = e.obs.size();
        for (std::size_t i = 0; i < n; ++i)
            s.dj_da[i] = alpha * inv_b * logits[i] + in_grad_min[obs_dim + i] + in_grad_c[obs_dim + i];

        if (batch[b].provenance >= 0 && batch[b].provenance < n_sub) {
            irm_sum[batch[b].provenance] += irm_dummy_scale_grad(logits, s.relaxed, alpha);
            ++irm_count[batch[b].provenance];
        }
    }

    out.irm_g.assign(n_sub, 0.0);
    for (int k = 0; k < n_sub; ++k)
        if (irm_count[k] > 0) out.irm_g[k] = irm_sum[k] / static_cast<double>(irm_count[k]);
    for (int k = 0; k < n_sub; ++k)
        out.irm_penalty += cfg.lambda_irm * sub_weights[k] * out.irm_g[k] * out.irm_g[k];
    out.total = out.j_sac + out.irm_penalty;

    // Assemble d total / d logits per sample and push through the actor.
    for (std::size_t b = 0; b < batch.size(); ++b) {
        SampleScratch& s = scratch[b];
        const std::vector<double>& logits = s.actor_trace.output;
        std::vector<double> dl(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            dl[i] = alpha * inv_b * (s.relaxed[i] - s.sigma_l[i]) + s.dj_da[i] * s.da_dl[i];
        }
        const int k = batch[b].provenance;
        if (k >= 0 && k < n_sub && irm_count[k] > 0) {
            const double coef =
                cfg.lambda_irm * sub_weights[k] * 2.0 * out.irm_g[k] * alpha /
                static_cast<double>(irm_count[k]);
            for (std::size_t i = 0; i < n; ++i) {
                const double ds = s.sigma_l[i] * (1.0 - s.sigma_l[i]);
                dl[i] += coef * ((s.relaxed[i] - s.sigma_l[i]) + logits[i] * (s.da_dl[i] - ds));
            }
        }
        backward(nets.actor, s.actor_trace, dl, &out.grads);
    }
    return out;
}

/// Standalone invariance penalty over tagged groups, for callers that hold
/// per-group batches. Returns the penalty value and its actor gradient.
inline ActorLossResult irm_penalty(const AgentNets& nets,
                                   const std::vector<Batch>& per_sub_batches,
                                   const std::vector<std::vector<std::vector<double>>>& per_sub_noise,
                                   const AgentConfig& cfg, double alpha, double temp,
                                   const std::vector<double>& sub_weights) {
    ActorLossResult out;
    out.grads = MlpGradients::zeros_like(nets.actor);
    const int n_sub = static_cast<int>(per_sub_batches.size());
    out.irm_g.assign(n_sub, 0.0);
    const std::size_t n = static_cast<std::size_t>(cfg.n_devices);

    bool any = false;
    for (int k = 0; k < n_sub; ++k) any = any || !per_sub_batches[k].empty();
    if (!any) return out;  // empty groups contribute nothing

    struct Item {
        ForwardTrace trace;
        std::vector<double> relaxed, da_dl, sigma_l;
    };
    std::vector<std::vector<Item>> items(n_sub);

    for (int k = 0; k < n_sub; ++k) {
        double g_sum = 0.0;
        items[k].resize(per_sub_batches[k].size());
        for (std::size_t b = 0; b < per_sub_batches[k].size(); ++b) {
            Item& it = items[k][b];
            const std::vector<double>& logits =
                forward(nets.actor, per_sub_batches[k][b].exp.obs, it.trace);
            it.relaxed.resize(n);
            it.da_dl.resize(n);
            it.sigma_l.resize(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double rel = sigmoid((logits[i] + per_sub_noise[k][b][i]) / temp);
                it.relaxed[i] = rel;
                it.da_dl[i] = rel * (1.0 - rel) / temp;
                it.sigma_l[i] = sigmoid(logits[i]);
            }
            g_sum += irm_dummy_scale_grad(logits, it.relaxed, alpha);
        }
        if (!per_sub_batches[k].empty())
            out.irm_g[k] = g_sum / static_cast<double>(per_sub_batches[k].size());
        out.irm_penalty += cfg.lambda_irm * sub_weights[k] * out.irm_g[k] * out.irm_g[k];
    }
    out.total = out.irm_penalty;

    for (int k = 0; k < n_sub; ++k) {
        if (per_sub_batches[k].empty()) continue;
        const double coef = cfg.lambda_irm * sub_weights[k] * 2.0 * out.irm_g[k] * alpha /
                            static_cast<double>(per_sub_batches[k].size());
        for (auto& it : items[k]) {
            const std::vector<double>& logits = it.trace.output;
            std::vector<double> dl(n);
            for (std::size_t i = 0; i < n; ++i) {
                const double ds = it.sigma_l[i] * (1.0 - it.sigma_l[i]);
                dl[i] = coef * ((it.relaxed[i] - it.sigma_l[i]) + logits[i] * (it.da_dl[i] - ds));
            }
            backward(nets.actor, it.trace, dl, &out.grads);
        }
    }
    return out;
}

struct MultiplierLossResult {
    double loss = 0.0;
    MlpGradients grads;  // gradient of the loss; the update ascends it
};

/// J_lambda = mean lambda(S) (Q_C(S, a) - cost_threshold) with a drawn from
/// the current policy. The owner applies gradient ascent so the multiplier
/// grows exactly where predicted cost exceeds the budget.
inline MultiplierLossResult multiplier_loss(const AgentNets& nets, const Batch& batch,
                                            const std::vector<std::vector<double>>& actions,
                                            double cost_threshold) {
    if (batch.empty()) throw std::invalid_argument("multiplier_loss: empty batch");
    if (actions.size() != batch.size())
        throw std::invalid_argument("multiplier_loss: action count mismatch");
    MultiplierLossResult out;
    out.grads = MlpGradients::zeros_like(nets.multiplier);
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    ForwardTrace mult_trace, critic_trace;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Experience& e = batch[b].exp;
        const double lambda = forward(nets.multiplier, e.obs, mult_trace)[0];
        const std::vector<double> in = detail::critic_input(e.obs, actions[b]);
        const double qc = forward(nets.qc, in, critic_trace)[0];
        out.loss += lambda * (qc - cost_threshold) * inv_b;
        backward(nets.multiplier, mult_trace, {(qc - cost_threshold) * inv_b}, &out.grads);
    }
    return out;
}

/// Draws one hard action per batch item from the current policy.
inline std::vector<std::vector<double>> sample_policy_actions(const Mlp& actor, const Batch& batch,
                                                              Rng& rng) {
    std::vector<std::vector<double>> actions;
    actions.reserve(batch.size());
    for (const auto& item : batch) {
        const std::vector<double> logits = forward(actor, item.exp.obs);
        std::vector<double> a(logits.size());
        for (std::size_t i = 0; i < logits.size(); ++i)
            a[i] = rng.bernoulli(sigmoid(logits[i])) ? 1.0 : 0.0;
        actions.push_back(std::move(a));
    }
    return actions;
}

/// Batch-mean policy entropy (sum of per-device binary entropies).
inline double batch_policy_entropy(const Mlp& actor, const Batch& batch) {
    double h = 0.0;
    for (const auto& item : batch) h += bernoulli_entropy_sum(forward(actor, item.exp.obs));
    return h / static_cast<double>(batch.size());
}

/// Target-entropy temperature rule: descend alpha (in log space, keeping it
/// positive) on alpha * (H_hat - H_target), so alpha rises while the policy
/// is less random than the target and falls once it is more random.
inline double tune_alpha(double log_alpha, double batch_entropy, double target_entropy,
                         double lr_alpha) {
    const double alpha = std::exp(log_alpha);
    return log_alpha - lr_alpha * alpha * (batch_entropy - target_entropy);
}

// --- training loop -----------------------------------------------------------

struct BudgetChange {
    int episode = 0;
    int rb_budget = 0;
};

struct TrainingReport {
    std::vector<double> episode_reward;
    std::vector<double> episode_cost;
    std::vector<double> episode_violation_rate;
    std::vector<double> episode_weighted_mismatch;
    std::vector<BudgetChange> budget_changes;
    std::vector<double> stage_plateau_reward;  // mean reward of each stage's last quarter
    long gradient_steps = 0;
    long env_steps = 0;
};

using EnvFactory = std::function<TwinEnv(std::uint64_t episode_index)>;

class MtrSacAgent {
public:
    MtrSacAgent(AgentConfig cfg, std::uint64_t seed)
        : cfg_(std::move(cfg)), init_rng_(derive_seed(seed, 0xA5EE7)), buffer_(cfg_.mtr) {
        cfg_.validate();
        nets_ = AgentNets::create(cfg_, init_rng_);
        opt_q1_ = AdamState::create(nets_.q1, cfg_.lr_q);
        opt_q2_ = AdamState::create(nets_.q2, cfg_.lr_q);
        opt_qc_ = AdamState::create(nets_.qc, cfg_.lr_q);
        opt_actor_ = AdamState::create(nets_.actor, cfg_.lr_pi);
        opt_mult_ = AdamState::create(nets_.multiplier, cfg_.lr_lambda);
        log_alpha_ = std::log(cfg_.alpha_init);
    }

    const AgentConfig& config() const { return cfg_; }
    AgentNets& nets() { return nets_; }
    const AgentNets& nets() const { return nets_; }
    double alpha() const { return std::exp(log_alpha_); }
    const MtrBuffer& buffer() const { return buffer_; }

    Action select_action(const Observation& obs, ActMode mode, Rng& rng) const {
        return act(nets_.actor, flatten_observation(obs, cfg_.staleness_scale), mode, rng);
    }

    /// Interact / push / gradient-step loop of the training algorithm. The
    /// budget schedule is applied at episode boundaries. Throws on a
    /// non-finite loss after writing a diagnostic checkpoint.
    TrainingReport train(const EnvFactory& make_env, int episodes, int slots_per_episode,
                         const std::vector<BudgetChange>& budget_schedule, std::uint64_t seed) {
        TrainingReport report;
        if (episodes <= 0) return report;
        if (slots_per_episode < 1)
            throw std::invalid_argument("train: slots_per_episode must be >= 1");

        Rng train_rng(derive_seed(seed, 0x7241));
        buffer_ = MtrBuffer(cfg_.mtr);
        long global_step = 0;
        long grad_step = 0;
        const long planned_grad_steps =
            static_cast<long>(episodes) * std::max(1, cfg_.grad_steps_per_episode);
        int current_budget = -1;

        for (int ep = 0; ep < episodes; ++ep) {
            for (const auto& change : budget_schedule) {
                if (change.episode == ep) {
                    current_budget = change.rb_budget;
                    report.budget_changes.push_back(change);
                }
            }
            TwinEnv env = make_env(static_cast<std::uint64_t>(ep));
            if (current_budget > 0) env.set_rb_budget(current_budget);
            const int budget = env.rb_budget();
            const double cost_threshold = budget / (1.0 - cfg_.gamma_c);

            double reward_sum = 0.0, cost_sum = 0.0;
            long violations = 0;
            std::vector<std::vector<double>> mismatch_rows;
            std::vector<double> weights;
            for (const auto& p : env.profiles()) weights.push_back(p.priority_w);

            std::vector<double> obs_flat = flatten_observation(env.observation(), cfg_.staleness_scale);
            const int slots = std::min<long>(slots_per_episode,
                                             static_cast<long>(env.horizon()) - 1);
            for (int s = 0; s < slots; ++s) {
                Action a = act(nets_.actor, obs_flat, ActMode::sample, train_rng);
                StepOutcome outcome = env.step(a);
                std::vector<double> next_flat =
                    flatten_observation(outcome.next_observation, cfg_.staleness_scale);

                Experience e;
                e.obs = obs_flat;
                e.action = a.schedule;
                e.reward = outcome.reward;
                e.cost = outcome.cost;
                e.next_obs = next_flat;
                e.born_step = global_step;
                buffer_.push(std::move(e), train_rng);

                reward_sum += outcome.reward;
                cost_sum += outcome.cost;
                if (outcome.cost > budget + 1e-9) ++violations;
                mismatch_rows.push_back(env.truth().mismatch);

                obs_flat = std::move(next_flat);
                ++global_step;
                if (outcome.episode_end) break;
            }
            const double n_slots = static_cast<double>(mismatch_rows.size());
            report.episode_reward.push_back(reward_sum / n_slots);
            report.episode_cost.push_back(cost_sum / n_slots);
            report.episode_violation_rate.push_back(static_cast<double>(violations) / n_slots);
            report.episode_weighted_mismatch.push_back(weighted_mismatch(mismatch_rows, weights));
            report.env_steps = global_step;

            if (buffer_.total_stored() < static_cast<std::size_t>(cfg_.batch_size)) continue;

            for (int g = 0; g < cfg_.grad_steps_per_episode; ++g) {
                ++grad_step;
                const double progress =
                    static_cast<double>(grad_step) / static_cast<double>(planned_grad_steps);
                const double temp =
                    cfg_.relax_temp + std::min(1.0, progress) * (cfg_.relax_temp_final - cfg_.relax_temp);

                Batch batch = buffer_.sample_batch(static_cast<std::size_t>(cfg_.batch_size), train_rng);
                const double alpha_now = std::exp(log_alpha_);

                TwinCriticLoss qloss = critic_loss(nets_, batch, cfg_, alpha_now, train_rng);
                ValueLoss closs = cost_critic_loss(nets_, batch, cfg_, train_rng);
                check_finite(qloss.loss1, "reward critic 1 loss");
                check_finite(qloss.loss2, "reward critic 2 loss");
                check_finite(closs.loss, "cost critic loss");
                adam_update(nets_.q1, qloss.grads1, opt_q1_, cfg_.lr_q);
                adam_update(nets_.q2, qloss.grads2, opt_q2_, cfg_.lr_q);
                adam_update(nets_.qc, closs.grads, opt_qc_, cfg_.lr_q);

                if (grad_step % cfg_.actor_every == 0) {
                    auto noise = prepare_actor_noise(batch.size(), cfg_.n_devices, train_rng);
                    ActorLossResult aloss = actor_loss(nets_, batch, noise, cfg_, alpha_now, temp,
                                                       cost_threshold, occupancy_weights());
                    check_finite(aloss.total, "actor loss");
                    adam_update(nets_.actor, aloss.grads, opt_actor_, cfg_.lr_pi);

                    const double h = batch_policy_entropy(nets_.actor, batch);
                    log_alpha_ = tune_alpha(log_alpha_, h, cfg_.resolved_target_entropy(), cfg_.lr_alpha);
                }
                if (grad_step % cfg_.lambda_every == 0) {
                    auto actions = sample_policy_actions(nets_.actor, batch, train_rng);
                    MultiplierLossResult mloss =
                        multiplier_loss(nets_, batch, actions, cost_threshold);
                    check_finite(mloss.loss, "multiplier loss");
                    MlpGradients ascent = MlpGradients::zeros_like(nets_.multiplier);
                    ascent.add_scaled(mloss.grads, -1.0);  // Adam descends, so negate for ascent
                    adam_update(nets_.multiplier, ascent, opt_mult_, cfg_.lr_lambda);
                }
                polyak_blend(nets_.q1_target, nets_.q1, cfg_.rho);
                polyak_blend(nets_.q2_target, nets_.q2, cfg_.rho);
                polyak_blend(nets_.qc_target, nets_.qc, cfg_.rho);
                polyak_blend(nets_.actor_target, nets_.actor, cfg_.rho);
            }
        }
        report.gradient_steps = grad_step;
        finalize_stage_plateaus(report, episodes);
        return report;
    }

    void save(const std::string& path) const {
        Checkpoint cp;
        cp.nets["actor"] = nets_.actor;
        cp.nets["q1"] = nets_.q1;
        cp.nets["q2"] = nets_.q2;
        cp.nets["qc"] = nets_.qc;
        cp.nets["multiplier"] = nets_.multiplier;
        cp.nets["actor_target"] = nets_.actor_target;
        cp.nets["q1_target"] = nets_.q1_target;
        cp.nets["q2_target"] = nets_.q2_target;
        cp.nets["qc_target"] = nets_.qc_target;
        cp.scalars["log_alpha"] = log_alpha_;
        save_checkpoint(path, cp);
    }

    void load(const std::string& path) {
        Checkpoint cp = load_checkpoint(path);
        nets_.actor = cp.nets.at("actor");
        nets_.q1 = cp.nets.at("q1");
        nets_.q2 = cp.nets.at("q2");
        nets_.qc = cp.nets.at("qc");
        nets_.multiplier = cp.nets.at("multiplier");
        nets_.actor_target = cp.nets.at("actor_target");
        nets_.q1_target = cp.nets.at("q1_target");
        nets_.q2_target = cp.nets.at("q2_target");
        nets_.qc_target = cp.nets.at("qc_target");
        log_alpha_ = cp.scalars.at("log_alpha");
    }

    std::vector<double> occupancy_weights() const {
        std::vector<double> w(cfg_.mtr.n_sub, 0.0);
        const double total = static_cast<double>(buffer_.total_stored());
        if (total <= 0.0) return w;
        for (int k = 0; k < cfg_.mtr.n_sub; ++k)
            w[k] = static_cast<double>(buffer_.sub_size(k)) / total;
        return w;
    }

private:
    void check_finite(double value, const char* what) {
        if (std::isfinite(value)) return;
        const std::string path = cfg_.diagnostics_dir + "/mtr_sac_abort_checkpoint.json";
        try {
            save(path);
        } catch (const std::exception&) {
            // the abort reason below is the primary diagnostic
        }
        throw std::runtime_error(std::string("training aborted: non-finite ") + what +
                                 "; checkpoint at " + path);
    }

    void finalize_stage_plateaus(TrainingReport& report, int episodes) const {
        std::vector<int> starts{0};
        for (const auto& c : report.budget_changes)
            if (c.episode != 0) starts.push_back(c.episode);
        starts.push_back(episodes);
        for (std::size_t s = 0; s + 1 < starts.size(); ++s) {
            const int begin = starts[s], end = starts[s + 1];
            if (end <= begin) continue;
            const int len = end - begin;
            const int tail = std::max(1, len / 4);
            double sum = 0.0;
            for (int e = end - tail; e < end; ++e) sum += report.episode_reward[e];
            report.stage_plateau_reward.push_back(sum / tail);
        }
    }

    AgentConfig cfg_;
    Rng init_rng_;
    AgentNets nets_;
    AdamState opt_q1_, opt_q2_, opt_qc_, opt_actor_, opt_mult_;
    double log_alpha_ = 0.0;
    MtrBuffer buffer_;
};

}  // namespace dtsync
