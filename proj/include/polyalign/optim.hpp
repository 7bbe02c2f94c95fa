#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "encoders.hpp"
#include "error.hpp"
#include "numerics.hpp"

namespace polyalign {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::sgd;
    double eta = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    std::optional<double> clip_norm;

    static OptimizerConfig of(OptimizerKind kind, double eta) {
        OptimizerConfig c;
        c.kind = kind;
        c.eta = eta;
        return c;
    }

    void validate() const {
        if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("optimizer.eta must be nonnegative");
        if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("optimizer.beta1 must lie in [0, 1)");
        if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("optimizer.beta2 must lie in [0, 1)");
        if (!(eps_adam > 0.0)) throw ConfigError("optimizer.eps must be positive");
        if (clip_norm && !(*clip_norm > 0.0)) throw ConfigError("optimizer.clip_norm must be positive");
    }
};

struct AdamState {
    Vec m;
    Vec v;
    std::uint64_t t = 0;

    static AdamState fresh(std::size_t n) { return {Vec(n, 0.0), Vec(n, 0.0), 0}; }
};

/// g * min(1, clip_norm / ||g||); unchanged without a clip norm.
inline Vec clip_gradient(const Vec& g, std::optional<double> clip_norm) {
    if (!clip_norm) return g;
    const double n = norm(g);
    if (n <= *clip_norm) return g;
    Vec out = g;
    const double s = *clip_norm / n;
    for (double& x : out) x *= s;
    return out;
}

inline WeightVector sgd_step(const WeightVector& w, const Vec& g, const OptimizerConfig& cfg) {
    if (w.size() != g.size()) throw DimensionError("sgd_step: weight/gradient length mismatch");
    const Vec gc = clip_gradient(g, cfg.clip_norm);
    WeightVector out = w;
    axpy(-cfg.eta, gc, out);
    return out;
}

/// Bias-corrected Adam descent step; the denominator is sqrt(v_hat) + eps.
inline std::pair<WeightVector, AdamState> adam_step(const WeightVector& w, const Vec& g, AdamState state,
                                                    const OptimizerConfig& cfg) {
    if (w.size() != g.size()) throw DimensionError("adam_step: weight/gradient length mismatch");
    if (state.m.size() != w.size() || state.v.size() != w.size()) throw DimensionError("adam_step: state length mismatch");
    const Vec gc = clip_gradient(g, cfg.clip_norm);
    state.t += 1;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    WeightVector out = w;
    for (std::size_t i = 0; i < w.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * gc[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * gc[i] * gc[i];
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        out[i] -= cfg.eta * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
    }
    return {std::move(out), std::move(state)};
}

/// Owns the optimizer state for one training loop.
class Optimizer {
public:
    Optimizer(OptimizerConfig cfg, std::size_t n) : cfg_(cfg), adam_(AdamState::fresh(n)) { cfg_.validate(); }

    void step(WeightVector& w, const Vec& g) {
        if (cfg_.kind == OptimizerKind::sgd) {
            w = sgd_step(w, g, cfg_);
        } else {
            auto [nw, ns] = adam_step(w, g, std::move(adam_), cfg_);
            w = std::move(nw);
            adam_ = std::move(ns);
        }
    }

    const AdamState& adam_state() const noexcept { return adam_; }
    const OptimizerConfig& config() const noexcept { return cfg_; }

private:
    OptimizerConfig cfg_;
    AdamState adam_;
};

} // namespace polyalign
