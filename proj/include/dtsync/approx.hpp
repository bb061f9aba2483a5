#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "dtsync/rng.hpp"

namespace dtsync {

enum class Activation { relu, tanh };
enum class OutputTransform { identity, softplus, logits };

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

inline double softplus(double z) {
    return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Fully-connected network parameters. Weights are row-major (out x in).
/// The output transform is applied after the last linear layer; `logits`
/// is numerically the identity and only documents intent.
struct Mlp {
    std::vector<int> dims;  // layer widths, input first
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    std::vector<Activation> hidden_activations;
    OutputTransform output_transform = OutputTransform::identity;

    int input_dim() const { return dims.front(); }
    int output_dim() const { return dims.back(); }
    std::size_t layer_count() const { return weights.size(); }

    static Mlp create(const std::vector<int>& dims, OutputTransform out, Rng& rng,
                      Activation hidden = Activation::relu) {
        if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
        Mlp net;
        net.dims = dims;
        net.output_transform = out;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const int fan_in = dims[l];
            const int fan_out = dims[l + 1];
            const double scale = hidden == Activation::relu ? std::sqrt(2.0 / fan_in)
                                                            : std::sqrt(1.0 / fan_in);
            std::vector<double> w(static_cast<std::size_t>(fan_in) * fan_out);
            for (double& v : w) v = rng.normal(0.0, scale);
            net.weights.push_back(std::move(w));
            net.biases.emplace_back(fan_out, 0.0);
            if (l + 2 < dims.size()) net.hidden_activations.push_back(hidden);
        }
        return net;
    }
};

/// Per-call activation record needed by the backward pass.
struct ForwardTrace {
    std::vector<std::vector<double>> inputs;  // input vector of each layer
    std::vector<std::vector<double>> pre;     // pre-activation of each layer
    std::vector<double> output;               // after the output transform
};

inline const std::vector<double>& forward(const Mlp& net, const std::vector<double>& input,
                                          ForwardTrace& trace) {
    if (static_cast<int>(input.size()) != net.input_dim())
        throw std::invalid_argument("forward: input dimension mismatch");
    trace.inputs.assign(net.layer_count(), {});
    trace.pre.assign(net.layer_count(), {});

    std::vector<double> x = input;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        const int in_dim = net.dims[l];
        const int out_dim = net.dims[l + 1];
        trace.inputs[l] = x;
        std::vector<double> z(out_dim);
        const double* w = net.weights[l].data();
        for (int o = 0; o < out_dim; ++o) {
            double acc = net.biases[l][o];
            const double* row = w + static_cast<std::size_t>(o) * in_dim;
            for (int i = 0; i < in_dim; ++i) acc += row[i] * x[i];
            z[o] = acc;
        }
        trace.pre[l] = z;
        if (l + 1 < net.layer_count()) {
            const Activation act = net.hidden_activations[l];
            for (double& v : z) v = act == Activation::relu ? (v > 0.0 ? v : 0.0) : std::tanh(v);
        }
        x = std::move(z);
    }
    if (net.output_transform == OutputTransform::softplus)
        for (double& v : x) v = softplus(v);
    trace.output = std::move(x);
    return trace.output;
}

inline std::vector<double> forward(const Mlp& net, const std::vector<double>& input) {
    ForwardTrace trace;
    return forward(net, input, trace);
}

/// Gradient container with the same shapes as the network it was built for.
struct MlpGradients {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;

    static MlpGradients zeros_like(const Mlp& net) {
        MlpGradients g;
        for (std::size_t l = 0; l < net.layer_count(); ++l) {
            g.weights.emplace_back(net.weights[l].size(), 0.0);
            g.biases.emplace_back(net.biases[l].size(), 0.0);
        }
        return g;
    }

    void zero() {
        for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
        for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
    }

    void scale(double s) {
        for (auto& w : weights)
            for (double& v : w) v *= s;
        for (auto& b : biases)
            for (double& v : b) v *= s;
    }

    void add_scaled(const MlpGradients& other, double s) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (std::size_t i = 0; i < weights[l].size(); ++i) weights[l][i] += s * other.weights[l][i];
            for (std::size_t i = 0; i < biases[l].size(); ++i) biases[l][i] += s * other.biases[l][i];
        }
    }

    bool finite() const {
        for (const auto& w : weights)
            for (double v : w)
                if (!std::isfinite(v)) return false;
        for (const auto& b : biases)
            for (double v : b)
                if (!std::isfinite(v)) return false;
        return true;
    }
};

/// Exact reverse-mode gradients of the forward map, accumulated into
/// `grad_accum` when non-null. Also writes the gradient w.r.t. the input
/// vector when `input_grad` is non-null (needed where a loss differentiates
/// a critic w.r.t. its action input). A relu unit sitting exactly at zero
/// pre-activation uses subgradient 0.
inline void backward(const Mlp& net, const ForwardTrace& trace,
                     const std::vector<double>& upstream, MlpGradients* grad_accum,
                     std::vector<double>* input_grad = nullptr) {
    if (static_cast<int>(upstream.size()) != net.output_dim())
        throw std::invalid_argument("backward: upstream dimension mismatch");
    if (grad_accum != nullptr && grad_accum->weights.size() != net.layer_count())
        throw std::invalid_argument("backward: gradient shape mismatch");

    std::vector<double> delta = upstream;
    if (net.output_transform == OutputTransform::softplus) {
        const auto& z = trace.pre.back();
        for (std::size_t o = 0; o < delta.size(); ++o) delta[o] *= sigmoid(z[o]);
    }

    for (std::size_t l = net.layer_count(); l-- > 0;) {
        const int in_dim = net.dims[l];
        const int out_dim = net.dims[l + 1];
        if (l + 1 < net.layer_count()) {
            const Activation act = net.hidden_activations[l];
            const auto& z = trace.pre[l];
            for (int o = 0; o < out_dim; ++o) {
                if (act == Activation::relu) {
                    delta[o] *= z[o] > 0.0 ? 1.0 : 0.0;
                } else {
                    const double th = std::tanh(z[o]);
                    delta[o] *= 1.0 - th * th;
                }
            }
        }
        if (grad_accum != nullptr) {
            const auto& x = trace.inputs[l];
            double* gw = grad_accum->weights[l].data();
            for (int o = 0; o < out_dim; ++o) {
                const double d = delta[o];
                grad_accum->biases[l][o] += d;
                double* row = gw + static_cast<std::size_t>(o) * in_dim;
                for (int i = 0; i < in_dim; ++i) row[i] += d * x[i];
            }
        }
        if (l > 0 || input_grad != nullptr) {
            std::vector<double> prev(in_dim, 0.0);
            const double* w = net.weights[l].data();
            for (int o = 0; o < out_dim; ++o) {
                const double d = delta[o];
                const double* row = w + static_cast<std::size_t>(o) * in_dim;
                for (int i = 0; i < in_dim; ++i) prev[i] += d * row[i];
            }
            if (l == 0) {
                *input_grad = std::move(prev);
                break;
            }
            delta = std::move(prev);
        }
    }
}

/// Adam moment accumulators for one network.
struct AdamState {
    MlpGradients first_moment;
    MlpGradients second_moment;
    long step_count = 0;
    double learning_rate = 1e-3;

    static AdamState create(const Mlp& net, double lr) {
        AdamState s;
        s.first_moment = MlpGradients::zeros_like(net);
        s.second_moment = MlpGradients::zeros_like(net);
        s.learning_rate = lr;
        return s;
    }
};

/// Bias-corrected Adam step (beta1=0.9, beta2=0.999, eps=1e-8). A non-finite
/// gradient rejects the whole update.
inline void adam_update(Mlp& net, const MlpGradients& grads, AdamState& opt, double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    if (grads.weights.size() != net.layer_count())
        throw std::invalid_argument("adam_update: gradient shape mismatch");
    if (!grads.finite())
        throw std::runtime_error("adam_update: rejected non-finite gradient");

    opt.step_count += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(opt.step_count));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(opt.step_count));

    auto update = [&](std::vector<double>& p, const std::vector<double>& g, std::vector<double>& m,
                      std::vector<double>& v) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        }
    };
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        update(net.weights[l], grads.weights[l], opt.first_moment.weights[l],
               opt.second_moment.weights[l]);
        update(net.biases[l], grads.biases[l], opt.first_moment.biases[l],
               opt.second_moment.biases[l]);
    }
}

/// target <- rho * online + (1 - rho) * target, elementwise.
inline void polyak_blend(Mlp& target, const Mlp& online, double rho) {
    if (target.dims != online.dims) throw std::invalid_argument("polyak_blend: shape mismatch");
    for (std::size_t l = 0; l < target.layer_count(); ++l) {
        for (std::size_t i = 0; i < target.weights[l].size(); ++i)
            target.weights[l][i] = rho * online.weights[l][i] + (1.0 - rho) * target.weights[l][i];
        for (std::size_t i = 0; i < target.biases[l].size(); ++i)
            target.biases[l][i] = rho * online.biases[l][i] + (1.0 - rho) * target.biases[l][i];
    }
}

// --- checkpoint io ---------------------------------------------------------

inline constexpr const char* kCheckpointFormat = "dtsync-checkpoint-v1";

struct Checkpoint {
    std::map<std::string, Mlp> nets;
    std::map<std::string, double> scalars;
};

namespace detail {

inline std::string activation_name(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

inline Activation activation_from_name(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::runtime_error("checkpoint: unknown activation " + s);
}

inline std::string transform_name(OutputTransform t) {
    switch (t) {
        case OutputTransform::identity: return "identity";
        case OutputTransform::softplus: return "softplus";
        case OutputTransform::logits: return "logits";
    }
    return "identity";
}

inline OutputTransform transform_from_name(const std::string& s) {
    if (s == "identity") return OutputTransform::identity;
    if (s == "softplus") return OutputTransform::softplus;
    if (s == "logits") return OutputTransform::logits;
    throw std::runtime_error("checkpoint: unknown output transform " + s);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& cp) {
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    for (const auto& [name, net] : cp.nets) {
        nlohmann::json n;
        n["dims"] = net.dims;
        n["output_transform"] = detail::transform_name(net.output_transform);
        for (const auto& a : net.hidden_activations)
            n["hidden_activations"].push_back(detail::activation_name(a));
        n["weights"] = net.weights;
        n["biases"] = net.biases;
        j["nets"][name] = std::move(n);
    }
    j["scalars"] = cp.scalars;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
    out << j.dump();
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != kCheckpointFormat)
        throw std::runtime_error("load_checkpoint: unsupported format tag");
    Checkpoint cp;
    for (auto& [name, n] : j.at("nets").items()) {
        Mlp net;
        net.dims = n.at("dims").get<std::vector<int>>();
        net.output_transform = detail::transform_from_name(n.at("output_transform"));
        if (n.contains("hidden_activations"))
            for (const auto& a : n["hidden_activations"])
                net.hidden_activations.push_back(detail::activation_from_name(a));
        net.weights = n.at("weights").get<std::vector<std::vector<double>>>();
        net.biases = n.at("biases").get<std::vector<std::vector<double>>>();
        cp.nets.emplace(name, std::move(net));
    }
    if (j.contains("scalars")) cp.scalars = j["scalars"].get<std::map<std::string, double>>();
    return cp;
}

}  // namespace dtsync
