#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>

#include <Eigen/Dense>

#include "gssm/autodiff.hpp"
#include "gssm/errors.hpp"
#include "gssm/geometric.hpp"
#include "gssm/signal.hpp"
#include "gssm/tasks.hpp"

namespace gssm {

struct MambaConfig {
    std::size_t m = 16;  // channels (embedding dimension)
    std::size_t n = 8;   // diagonal state per channel
    std::size_t vocab = 8;
    std::size_t classes = 8;
    Pooling pooling = Pooling::last;

    void validate() const {
        if (m == 0 || n == 0) throw ConfigError("selective: m and n must be positive");
        if (vocab == 0 || classes == 0) throw ConfigError("selective: vocab and classes must be positive");
    }
};

/// Isolated selective SSM core. The continuous state matrices are
/// abar = -exp(a_log), so they stay strictly negative for any a_log.
struct MambaParams {
    MatrixXd a_log;       // m x n
    MatrixXd w_delta;     // m x m, row i is W_delta^i
    MatrixXd w_b;         // n x m
    MatrixXd w_c;         // n x m
    MatrixXd embeddings;  // vocab x m
    MatrixXd readout;     // classes x m
    VectorXd bias;        // classes

    MatrixXd abar() const { return -a_log.array().exp().matrix(); }
};

struct MambaModel {
    MambaConfig config;
    MambaParams params;
};

inline std::size_t ssm_parameter_count(const MambaConfig& c) {
    return c.m * c.n + c.m * c.m + 2 * c.n * c.m;
}

inline std::size_t total_parameter_count(const MambaConfig& c) {
    return ssm_parameter_count(c) + c.vocab * c.m + c.classes * c.m + c.classes;
}

/// abar^i = -(1, 2, ..., n) for every channel; projections ~ N(0, 1/m).
inline MambaParams init_mamba(const MambaConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(derive_seed(seed, 13));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto randn = [&](std::size_t r, std::size_t k, double scale) {
        MatrixXd out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k));
        for (Eigen::Index i = 0; i < out.rows(); ++i)
            for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = scale * normal(rng);
        return out;
    };
    const double s = 1.0 / std::sqrt(static_cast<double>(c.m));
    MambaParams p;
    p.a_log.resize(static_cast<Eigen::Index>(c.m), static_cast<Eigen::Index>(c.n));
    for (Eigen::Index i = 0; i < p.a_log.rows(); ++i)
        for (Eigen::Index j = 0; j < p.a_log.cols(); ++j) p.a_log(i, j) = std::log(static_cast<double>(j + 1));
    p.w_delta = randn(c.m, c.m, s);
    p.w_b = randn(c.n, c.m, s);
    p.w_c = randn(c.n, c.m, s);
    p.embeddings = randn(c.vocab, c.m, 1.0);
    p.readout = randn(c.classes, c.m, s);
    p.bias = VectorXd::Zero(static_cast<Eigen::Index>(c.classes));
    return p;
}

inline ad::ParamList to_param_list(const MambaParams& p) {
    using namespace detail;
    return {
        {"a_log", matrix_tensor(p.a_log)},           {"w_delta", matrix_tensor(p.w_delta)},
        {"w_b", matrix_tensor(p.w_b)},               {"w_c", matrix_tensor(p.w_c)},
        {"embeddings", matrix_tensor(p.embeddings)}, {"readout.weight", matrix_tensor(p.readout)},
        {"readout.bias", vector_tensor(p.bias)},
    };
}

inline MambaParams from_param_list(const MambaConfig& c, const ad::ParamList& list) {
    using namespace detail;
    MambaParams p;
    p.a_log = tensor_matrix(find_param(list, "a_log", {c.m, c.n}));
    p.w_delta = tensor_matrix(find_param(list, "w_delta", {c.m, c.m}));
    p.w_b = tensor_matrix(find_param(list, "w_b", {c.n, c.m}));
    p.w_c = tensor_matrix(find_param(list, "w_c", {c.n, c.m}));
    p.embeddings = tensor_matrix(find_param(list, "embeddings", {c.vocab, c.m}));
    p.readout = tensor_matrix(find_param(list, "readout.weight", {c.classes, c.m}));
    p.bias = tensor_vector(find_param(list, "readout.bias", {c.classes}));
    return p;
}

/// Zero-order hold of a diagonal continuous system with step delta:
/// A = exp(delta abar), B = (exp(delta abar) - 1) / abar * bbar.
inline std::pair<VectorXd, VectorXd> discretize_zoh(const VectorXd& abar, const VectorXd& bbar, double delta) {
    if (!(delta > 0.0)) throw ContractError("discretize_zoh: delta must be positive");
    if (abar.size() != bbar.size()) throw DimensionError("discretize_zoh: abar/bbar length mismatch");
    if ((abar.array() >= 0.0).any()) throw ContractError("discretize_zoh: abar must be negative");
    VectorXd A(abar.size()), B(abar.size());
    for (Eigen::Index j = 0; j < abar.size(); ++j) {
        A[j] = std::exp(delta * abar[j]);
        B[j] = std::expm1(delta * abar[j]) / abar[j] * bbar[j];
    }
    return {A, B};
}

/// Input-dependent selection at one step; a function of u(t) alone.
struct Selection {
    VectorXd delta;  // m, delta_i = softplus(W_delta^i u)
    VectorXd bbar;   // n, W_B u
    VectorXd cbar;   // n, W_C u
};

inline Selection selection_parameters(const MambaParams& p, const VectorXd& u) {
    Selection s{p.w_delta * u, p.w_b * u, p.w_c * u};
    for (auto& v : s.delta) v = ad::softplus(v);
    return s;
}

/// Replaces the input-dependent B/C generators by constants (LTI ablation).
struct MambaAblation {
    std::optional<VectorXd> fixed_b;
    std::optional<VectorXd> fixed_c;
};

struct MambaOutput {
    MatrixXd logits;  // batch x classes
    SignalBlock y;    // batch x length x m
};

/// Sequential recurrence of the m SISO selective systems from zero state,
/// y_i(t) = C_t h^i(t), then the readout.
inline MambaOutput selective_forward(const MambaModel& model, const SequenceBatch& tokens,
                                     const MambaAblation& ablation = {}) {
    const auto& p = model.params;
    const auto& c = model.config;
    const SignalBlock u = embed_tokens(p.embeddings, tokens);
    const MatrixXd abar = p.abar();
    const auto m = static_cast<Eigen::Index>(c.m), n = static_cast<Eigen::Index>(c.n);
    MambaOutput out;
    out.y = SignalBlock(tokens.batch, tokens.length, c.m);
    MatrixXd h(m, n);
    for (std::size_t b = 0; b < tokens.batch; ++b) {
        h.setZero();
        for (std::size_t t = 0; t < tokens.length; ++t) {
            const Eigen::Map<const VectorXd> ut(u.at(b, t).data(), m);
            Selection sel = selection_parameters(p, ut);
            if (ablation.fixed_b) sel.bbar = *ablation.fixed_b;
            if (ablation.fixed_c) sel.cbar = *ablation.fixed_c;
            for (Eigen::Index i = 0; i < m; ++i) {
                out.y(b, t, static_cast<std::size_t>(i)) = h.row(i).dot(sel.cbar);
                for (Eigen::Index j = 0; j < n; ++j) {
                    const double x = sel.delta[i] * abar(i, j);
                    h(i, j) = std::exp(x) * h(i, j) + std::expm1(x) / abar(i, j) * sel.bbar[j] * ut[i];
                }
            }
        }
    }
    out.logits = readout_logits(out.y, c.pooling, p.readout, p.bias);
    return out;
}

struct MambaVars {
    ad::Var a_log, w_delta, w_b, w_c, embeddings, readout, bias;
};

inline MambaVars push_parameters(ad::Tape& tape, const MambaParams& p) {
    auto list = to_param_list(p);
    std::vector<ad::Var> v;
    for (auto& e : list) v.push_back(tape.parameter(e.name, std::move(e.tensor)));
    return {v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
}

inline ad::Var record_mamba(ad::Tape& tape, const MambaVars& vars, const MambaConfig& c,
                            const SequenceBatch& tokens) {
    const ad::Var u = ad::embed(tape, vars.embeddings, tokens);
    const ad::Var delta = ad::softplus(tape, ad::affine(tape, u, vars.w_delta));
    const ad::Var bbar = ad::affine(tape, u, vars.w_b);
    const ad::Var cbar = ad::affine(tape, u, vars.w_c);
    const ad::Var a_mag = ad::exp(tape, vars.a_log);
    const ad::Var y = ad::selective_scan(tape, u, delta, bbar, cbar, a_mag);
    const ad::Var feat = c.pooling == Pooling::last ? ad::last_step(tape, y) : ad::mean_time(tape, y);
    return ad::affine(tape, feat, vars.readout, vars.bias);
}

}  // namespace gssm
