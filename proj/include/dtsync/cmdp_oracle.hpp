#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "dtsync/rng.hpp"

namespace dtsync {

namespace detail {

/// Dense Gaussian elimination with partial pivoting; sizes here are tiny
/// (at most states x actions of a toy problem).
inline std::vector<double> solve_linear_system(std::vector<std::vector<double>> a,
                                               std::vector<double> b) {
    const std::size_t n = a.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
        if (std::abs(a[pivot][col]) < 1e-14)
            throw std::runtime_error("solve_linear_system: singular matrix");
        std::swap(a[col], a[pivot]);
        std::swap(b[col], b[pivot]);
        for (std::size_t r = col + 1; r < n; ++r) {
            const double f = a[r][col] / a[col][col];
            if (f == 0.0) continue;
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    std::vector<double> x(n, 0.0);
    for (std::size_t r = n; r-- > 0;) {
        double acc = b[r];
        for (std::size_t c = r + 1; c < n; ++c) acc -= a[r][c] * x[c];
        x[r] = acc / a[r][r];
    }
    return x;
}

}  // namespace detail

/// A small abstract constrained MDP: minimize the discounted objective while
/// keeping the discounted constraint value within budget from every state
/// the initial distribution can reach.
struct TinyCmdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> transition;  // [s][a][s']
    std::vector<std::vector<double>> objective;                // [s][a], minimized
    std::vector<std::vector<double>> constraint_cost;          // [s][a]
    std::vector<double> init_dist;                             // d0 over states
    double discount = 0.99;
    double budget = 0.0;

    void validate() const {
        if (n_states < 1 || n_actions < 1) throw std::invalid_argument("TinyCmdp: empty spec");
        if (static_cast<int>(transition.size()) != n_states)
            throw std::invalid_argument("TinyCmdp: transition shape");
        for (const auto& row : transition) {
            if (static_cast<int>(row.size()) != n_actions)
                throw std::invalid_argument("TinyCmdp: transition shape");
            for (const auto& p : row) {
                double sum = 0.0;
                for (double v : p) sum += v;
                if (std::abs(sum - 1.0) > 1e-9)
                    throw std::invalid_argument("TinyCmdp: transition rows must sum to 1");
            }
        }
        if (!(discount > 0.0 && discount < 1.0))
            throw std::invalid_argument("TinyCmdp: discount in (0,1)");
    }
};

/// Discounted value of a deterministic policy under the given per-state-action
/// payoff: v = (I - gamma P_pi)^{-1} payoff_pi.
inline std::vector<double> policy_value(const TinyCmdp& mdp, const std::vector<int>& policy,
                                        const std::vector<std::vector<double>>& payoff) {
    const int n = mdp.n_states;
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    std::vector<double> b(n, 0.0);
    for (int s = 0; s < n; ++s) {
        a[s][s] = 1.0;
        for (int s2 = 0; s2 < n; ++s2) a[s][s2] -= mdp.discount * mdp.transition[s][policy[s]][s2];
        b[s] = payoff[s][policy[s]];
    }
    return detail::solve_linear_system(std::move(a), std::move(b));
}

/// States reachable from the support of the initial distribution under a
/// deterministic policy.
inline std::vector<bool> reachable_states(const TinyCmdp& mdp, const std::vector<int>& policy) {
    std::vector<bool> seen(mdp.n_states, false);
    std::vector<int> stack;
    for (int s = 0; s < mdp.n_states; ++s)
        if (mdp.init_dist[s] > 0.0 && !seen[s]) {
            seen[s] = true;
            stack.push_back(s);
        }
    while (!stack.empty()) {
        const int s = stack.back();
        stack.pop_back();
        for (int s2 = 0; s2 < mdp.n_states; ++s2)
            if (mdp.transition[s][policy[s]][s2] > 0.0 && !seen[s2]) {
                seen[s2] = true;
                stack.push_back(s2);
            }
    }
    return seen;
}

struct CmdpSolution {
    bool feasible = false;
    std::vector<int> best_policy;
    double primal_value = 0.0;          // state-wise constrained optimum
    double expectation_primal = 0.0;    // optimum under the expectation-only filter
    bool expectation_feasible = false;
    double dual_value = 0.0;            // saddle of the per-state Lagrangian
    std::vector<double> optimal_lambda; // per-state multipliers at the saddle
    long policies_enumerated = 0;
};

/// Enumerates every deterministic stationary policy, evaluates objective and
/// constraint values by linear solve, and returns (a) the best policy whose
/// constraint value satisfies the budget from every reachable state, (b) the
/// best policy under the weaker from-the-start expectation filter, and (c)
/// the saddle value of the per-state Lagrangian, maximized by coordinate
/// grid ascent over the multipliers. With an attained saddle the dual value
/// matches the state-wise primal optimum.
inline CmdpSolution brute_force_cmdp(const TinyCmdp& mdp) {
    mdp.validate();
    const int n_s = mdp.n_states, n_a = mdp.n_actions;
    long n_policies = 1;
    for (int s = 0; s < n_s; ++s) {
        n_policies *= n_a;
        if (n_policies > 2'000'000)
            throw std::invalid_argument("brute_force_cmdp: policy space too large to enumerate");
    }

    struct Eval {
        std::vector<int> policy;
        double obj_from_init = 0.0;    // E_{d0} v
        std::vector<double> vc;        // constraint value per state
        double vc_from_init = 0.0;
        bool statewise_feasible = false;
    };
    std::vector<Eval> evals;
    evals.reserve(static_cast<std::size_t>(n_policies));

    std::vector<int> policy(n_s, 0);
    for (long code = 0; code < n_policies; ++code) {
        long rem = code;
        for (int s = 0; s < n_s; ++s) {
            policy[s] = static_cast<int>(rem % n_a);
            rem /= n_a;
        }
        Eval ev;
        ev.policy = policy;
        const std::vector<double> v = policy_value(mdp, policy, mdp.objective);
        ev.vc = policy_value(mdp, policy, mdp.constraint_cost);
        const std::vector<bool> reach = reachable_states(mdp, policy);
        ev.statewise_feasible = true;
        for (int s = 0; s < n_s; ++s) {
            ev.obj_from_init += mdp.init_dist[s] * v[s];
            ev.vc_from_init += mdp.init_dist[s] * ev.vc[s];
            if (reach[s] && ev.vc[s] > mdp.budget + 1e-9) ev.statewise_feasible = false;
        }
        evals.push_back(std::move(ev));
    }

    CmdpSolution sol;
    sol.policies_enumerated = n_policies;
    double best = std::numeric_limits<double>::infinity();
    double best_exp = std::numeric_limits<double>::infinity();
    for (const auto& ev : evals) {
        if (ev.statewise_feasible && ev.obj_from_init < best) {
            best = ev.obj_from_init;
            sol.best_policy = ev.policy;
            sol.feasible = true;
        }
        if (ev.vc_from_init <= mdp.budget + 1e-9 && ev.obj_from_init < best_exp) {
            best_exp = ev.obj_from_init;
            sol.expectation_feasible = true;
        }
    }
    sol.primal_value = best;
    sol.expectation_primal = best_exp;
    if (!sol.feasible) return sol;

    // Dual: L(pi, lambda) = E_{d0} v + sum_s lambda_s d0_s (V_c(s) - budget).
    auto dual_inf = [&](const std::vector<double>& lambda) {
        double inf = std::numeric_limits<double>::infinity();
        for (const auto& ev : evals) {
            double l = ev.obj_from_init;
            for (int s = 0; s < n_s; ++s)
                l += lambda[s] * mdp.init_dist[s] * (ev.vc[s] - mdp.budget);
            inf = std::min(inf, l);
        }
        return inf;
    };

    std::vector<double> lambda(n_s, 0.0);
    double dual = dual_inf(lambda);
    double span = 1.0;
    for (const auto& ev : evals)
        for (int s = 0; s < n_s; ++s) span = std::max(span, std::abs(ev.vc[s] - mdp.budget));
    const double lambda_max = 64.0 / std::max(span, 1e-6);

    for (int sweep = 0; sweep < 24; ++sweep) {
        bool improved = false;
        for (int s = 0; s < n_s; ++s) {
            const double saved = lambda[s];
            double best_l = dual;
            double best_v = saved;
            for (int g = 0; g <= 96; ++g) {
                lambda[s] = lambda_max * static_cast<double>(g) / 96.0;
                const double v = dual_inf(lambda);
                if (v > best_l + 1e-12) {
                    best_l = v;
                    best_v = lambda[s];
                }
            }
            lambda[s] = best_v;
            if (best_l > dual + 1e-12) {
                dual = best_l;
                improved = true;
            }
        }
        if (!improved) break;
    }
    sol.dual_value = dual;
    sol.optimal_lambda = lambda;
    return sol;
}

/// A plain finite MDP with rewards to maximize, used by the soft-iteration
/// oracle.
struct TinyMdp {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> transition;
    std::vector<std::vector<double>> reward;
    double discount = 0.9;
};

struct SoftPolicyIterationResult {
    std::vector<std::vector<std::vector<double>>> q_iterates;  // [iter][s][a]
    std::vector<std::vector<double>> final_policy;             // pi(a|s)
    int iterations = 0;
    bool converged = false;
};

/// Exact soft policy evaluation: Q = R + gamma P (Pi Q + alpha H(pi)) solved
/// as one linear system in the state-action table.
inline std::vector<std::vector<double>> soft_policy_evaluation(
    const TinyMdp& mdp, const std::vector<std::vector<double>>& pi, double alpha) {
    const int n_s = mdp.n_states, n_a = mdp.n_actions;
    const int dim = n_s * n_a;
    auto idx = [n_a](int s, int a) { return s * n_a + a; };

    std::vector<double> entropy(n_s, 0.0);
    for (int s = 0; s < n_s; ++s)
        for (int a = 0; a < n_a; ++a)
            if (pi[s][a] > 0.0) entropy[s] -= pi[s][a] * std::log(pi[s][a]);

    std::vector<std::vector<double>> m(dim, std::vector<double>(dim, 0.0));
    std::vector<double> b(dim, 0.0);
    for (int s = 0; s < n_s; ++s) {
        for (int a = 0; a < n_a; ++a) {
            const int row = idx(s, a);
            m[row][row] += 1.0;
            double drift = 0.0;
            for (int s2 = 0; s2 < n_s; ++s2) {
                const double p = mdp.transition[s][a][s2];
                if (p == 0.0) continue;
                for (int a2 = 0; a2 < n_a; ++a2)
                    m[row][idx(s2, a2)] -= mdp.discount * p * pi[s2][a2];
                drift += p * entropy[s2];
            }
            b[row] = mdp.reward[s][a] + mdp.discount * alpha * drift;
        }
    }
    const std::vector<double> q_flat = detail::solve_linear_system(std::move(m), std::move(b));
    std::vector<std::vector<double>> q(n_s, std::vector<double>(n_a, 0.0));
    for (int s = 0; s < n_s; ++s)
        for (int a = 0; a < n_a; ++a) q[s][a] = q_flat[idx(s, a)];
    return q;
}

/// Softmax improvement step pi(a|s) proportional to exp(Q(s,a)/alpha).
inline std::vector<std::vector<double>> soft_policy_improvement(
    const std::vector<std::vector<double>>& q, double alpha) {
    std::vector<std::vector<double>> pi(q.size());
    for (std::size_t s = 0; s < q.size(); ++s) {
        const double qmax = *std::max_element(q[s].begin(), q[s].end());
        double z = 0.0;
        pi[s].resize(q[s].size());
        for (std::size_t a = 0; a < q[s].size(); ++a) {
            pi[s][a] = std::exp((q[s][a] - qmax) / alpha);
            z += pi[s][a];
        }
        for (double& p : pi[s]) p /= z;
    }
    return pi;
}

/// Alternates exact soft evaluation with softmax improvement, recording the
/// Q table of each iterate. Soft policy iteration improves Q monotonically
/// and converges to the fixed point of the soft Bellman optimality equation.
inline SoftPolicyIterationResult tabular_soft_policy_iteration(const TinyMdp& mdp, double alpha,
                                                               int max_iters = 200,
                                                               double tol = 1e-10) {
    if (!(alpha > 0.0))
        throw std::invalid_argument("tabular_soft_policy_iteration: alpha must be positive");
    SoftPolicyIterationResult res;
    std::vector<std::vector<double>> pi(
        mdp.n_states, std::vector<double>(mdp.n_actions, 1.0 / mdp.n_actions));
    std::vector<std::vector<double>> q_prev;
    for (int it = 0; it < max_iters; ++it) {
        std::vector<std::vector<double>> q = soft_policy_evaluation(mdp, pi, alpha);
        res.q_iterates.push_back(q);
        res.iterations = it + 1;
        if (!q_prev.empty()) {
            double delta = 0.0;
            for (int s = 0; s < mdp.n_states; ++s)
                for (int a = 0; a < mdp.n_actions; ++a)
                    delta = std::max(delta, std::abs(q[s][a] - q_prev[s][a]));
            if (delta < tol) {
                res.converged = true;
                res.final_policy = pi;
                return res;
            }
        }
        pi = soft_policy_improvement(q, alpha);
        q_prev = std::move(q);
    }
    res.final_policy = pi;
    return res;
}

/// Random tiny CMDP with the budget placed so that the unconstrained optimum
/// stays feasible while many policies are not; Theorem-style instances where
/// the dual saddle is attained at lambda = 0 yet the state-wise filter has
/// real work to do.
inline TinyCmdp random_tiny_cmdp(Rng& rng, int n_states, int n_actions) {
    TinyCmdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.discount = 0.99;
    mdp.transition.assign(n_states, std::vector<std::vector<double>>(
                                        n_actions, std::vector<double>(n_states, 0.0)));
    mdp.objective.assign(n_states, std::vector<double>(n_actions, 0.0));
    mdp.constraint_cost.assign(n_states, std::vector<double>(n_actions, 0.0));
    mdp.init_dist.assign(n_states, 1.0 / n_states);
    for (int s = 0; s < n_states; ++s) {
        for (int a = 0; a < n_actions; ++a) {
            double z = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                mdp.transition[s][a][s2] = 0.05 + rng.uniform();
                z += mdp.transition[s][a][s2];
            }
            for (int s2 = 0; s2 < n_states; ++s2) mdp.transition[s][a][s2] /= z;
            mdp.objective[s][a] = rng.uniform(0.0, 1.0);
            mdp.constraint_cost[s][a] = rng.uniform(0.0, 1.0);
        }
    }
    // Budget: tight against the unconstrained optimum so other policies get
    // filtered, slack enough that the saddle is attained.
    std::vector<int> best_policy(n_states, 0);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> policy(n_states, 0);
    long n_policies = 1;
    for (int s = 0; s < n_states; ++s) n_policies *= n_actions;
    for (long code = 0; code < n_policies; ++code) {
        long rem = code;
        for (int s = 0; s < n_states; ++s) {
            policy[s] = static_cast<int>(rem % n_actions);
            rem /= n_actions;
        }
        double obj = 0.0;
        const std::vector<double> v = policy_value(mdp, policy, mdp.objective);
        for (int s = 0; s < n_states; ++s) obj += mdp.init_dist[s] * v[s];
        if (obj < best) {
            best = obj;
            best_policy = policy;
        }
    }
    const std::vector<double> vc = policy_value(mdp, best_policy, mdp.constraint_cost);
    mdp.budget = *std::max_element(vc.begin(), vc.end()) + 0.05;
    return mdp;
}

}  // namespace dtsync
