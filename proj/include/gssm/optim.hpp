#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gssm/autodiff.hpp"
#include "gssm/errors.hpp"

namespace gssm {

struct AdamConfig {
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;  // <= 0 disables clipping
};

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<double>> first, second;
};

inline double global_norm(const ad::ParamList& grads) {
    double sq = 0.0;
    for (const auto& g : grads)
        for (double v : g.tensor.data) sq += v * v;
    return std::sqrt(sq);
}

/// Bias-corrected adaptive-moment update with optional global-norm clipping.
inline void optimizer_step(ad::ParamList& params, const ad::ParamList& grads, AdamState& state,
                           const AdamConfig& cfg) {
    if (params.size() != grads.size()) throw DimensionError("optimizer_step: parameter/gradient count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].tensor.shape != grads[i].tensor.shape)
            throw DimensionError("optimizer_step: shape mismatch for '" + params[i].name + "'");
    if (state.first.empty()) {
        for (const auto& p : params) {
            state.first.emplace_back(p.tensor.size(), 0.0);
            state.second.emplace_back(p.tensor.size(), 0.0);
        }
    }
    double scale = 1.0;
    if (cfg.clip_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > cfg.clip_norm) scale = cfg.clip_norm / norm;
    }
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].tensor.data;
        const auto& g = grads[i].tensor.data;
        auto& m = state.first[i];
        auto& v = state.second[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g[k] * scale;
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            p[k] -= cfg.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg.eps);
        }
    }
}

}  // namespace gssm
