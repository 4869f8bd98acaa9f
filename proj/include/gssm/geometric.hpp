#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gssm/autodiff.hpp"
#include "gssm/errors.hpp"
#include "gssm/lti.hpp"
#include "gssm/signal.hpp"
#include "gssm/tasks.hpp"

namespace gssm {

enum class Pooling { last, mean };
enum class ApplyMode { fft, recurrent };

inline std::string_view to_string(Pooling p) { return p == Pooling::last ? "last" : "mean"; }
inline Pooling pooling_from_string(std::string_view s) {
    if (s == "last") return Pooling::last;
    if (s == "mean") return Pooling::mean;
    throw ConfigError("unknown pooling '" + std::string(s) + "'");
}

inline std::string_view to_string(ApplyMode m) { return m == ApplyMode::fft ? "fft" : "recurrent"; }
inline ApplyMode apply_mode_from_string(std::string_view s) {
    if (s == "fft") return ApplyMode::fft;
    if (s == "recurrent") return ApplyMode::recurrent;
    throw ConfigError("unknown apply mode '" + std::string(s) + "'");
}

/// Sizes of the Geometric SSM. Sigma (the merged feature + main system) has
/// denominator degree nu_f + nu_m, i.e. realization dimension m*(nu_f+nu_m);
/// the residual generator has degree nu_r.
struct GeometricConfig {
    std::size_t m = 2;
    std::size_t nu_f = 2;
    std::size_t nu_m = 2;
    std::size_t nu_r = 4;
    std::size_t vocab = 8;
    std::size_t classes = 8;
    Pooling pooling = Pooling::last;

    std::size_t order() const { return nu_f + nu_m; }

    void validate() const {
        if (m == 0) throw ConfigError("geometric: m must be positive");
        if (order() < 1) throw ConfigError("geometric: nu_f + nu_m must be >= 1");
        if (nu_r < 1) throw ConfigError("geometric: nu_r must be >= 1");
        if (vocab == 0 || classes == 0) throw ConfigError("geometric: vocab and classes must be positive");
    }
};

struct GeometricParams {
    TransferFunction sigma;    // m x m, order nu_f + nu_m
    TransferFunction sigma_r;  // 1 x m, order nu_r
    MatrixXd embeddings;       // vocab x m
    MatrixXd readout;          // classes x m
    VectorXd bias;             // classes
};

struct GeometricModel {
    GeometricConfig config;
    GeometricParams params;
};

/// Learnable coefficients of the two transfer functions.
inline std::size_t ssm_parameter_count(const GeometricConfig& c) {
    const std::size_t q = c.order();
    return c.m * c.m * q + q + c.m * c.m + c.m * c.nu_r + c.nu_r + c.m;
}

inline std::size_t total_parameter_count(const GeometricConfig& c) {
    return ssm_parameter_count(c) + c.vocab * c.m + c.classes * c.m + c.classes;
}

/// Random initialization: Sigma starts as identity feedthrough with small
/// FIR taps and all poles at the origin; the residual generator starts as a
/// small random FIR filter.
inline GeometricParams init_geometric(const GeometricConfig& c, std::uint64_t seed) {
    c.validate();
    std::mt19937_64 rng(derive_seed(seed, 11));
    std::normal_distribution<double> normal(0.0, 1.0);
    auto randn = [&](Eigen::Index r, Eigen::Index k, double scale) {
        MatrixXd out(r, k);
        for (Eigen::Index i = 0; i < r; ++i)
            for (Eigen::Index j = 0; j < k; ++j) out(i, j) = scale * normal(rng);
        return out;
    };
    const auto m = static_cast<Eigen::Index>(c.m);
    const double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(c.m));
    GeometricParams p;
    std::vector<MatrixXd> num(c.order());
    for (auto& n : num) n = randn(m, m, 0.1 * inv_sqrt_m);
    p.sigma = TransferFunction(std::move(num), VectorXd::Zero(static_cast<Eigen::Index>(c.order())),
                               MatrixXd::Identity(m, m));
    std::vector<MatrixXd> rnum(c.nu_r);
    for (auto& n : rnum) n = randn(1, m, 0.5 * inv_sqrt_m);
    p.sigma_r = TransferFunction(std::move(rnum), VectorXd::Zero(static_cast<Eigen::Index>(c.nu_r)),
                                 randn(1, m, 0.5 * inv_sqrt_m));
    p.embeddings = randn(static_cast<Eigen::Index>(c.vocab), m, 1.0);
    p.readout = randn(static_cast<Eigen::Index>(c.classes), m, inv_sqrt_m);
    p.bias = VectorXd::Zero(static_cast<Eigen::Index>(c.classes));
    return p;
}

namespace detail {

inline ad::Tensor matrix_tensor(const MatrixXd& m) {
    ad::Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    Eigen::Map<ad::RowMat>(t.data.data(), m.rows(), m.cols()) = m;
    return t;
}

inline ad::Tensor vector_tensor(const VectorXd& v) {
    return ad::Tensor({static_cast<std::size_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size()));
}

inline ad::Tensor numerator_tensor(const TransferFunction& tf) {
    const auto po = static_cast<std::size_t>(tf.outputs()), pi = static_cast<std::size_t>(tf.inputs());
    ad::Tensor t({tf.order(), po, pi});
    for (std::size_t l = 0; l < tf.order(); ++l)
        Eigen::Map<ad::RowMat>(t.data.data() + l * po * pi, tf.outputs(), tf.inputs()) = tf.numerator[l];
    return t;
}

inline MatrixXd tensor_matrix(const ad::Tensor& t) {
    if (t.shape.size() != 2) throw DimensionError("expected a matrix tensor");
    return Eigen::Map<const ad::RowMat>(t.data.data(), static_cast<Eigen::Index>(t.dim(0)),
                                        static_cast<Eigen::Index>(t.dim(1)));
}

inline VectorXd tensor_vector(const ad::Tensor& t) {
    return Eigen::Map<const VectorXd>(t.data.data(), static_cast<Eigen::Index>(t.size()));
}

inline const ad::Tensor& find_param(const ad::ParamList& list, const std::string& name,
                                    const std::vector<std::size_t>& shape) {
    for (const auto& p : list)
        if (p.name == name) {
            if (p.tensor.shape != shape) throw DimensionError("parameter '" + name + "' has wrong shape");
            return p.tensor;
        }
    throw FormatError("missing parameter '" + name + "'");
}

}  // namespace detail

/// Flat named arrays in a fixed order (checkpoint and optimizer view).
inline ad::ParamList to_param_list(const GeometricParams& p) {
    using namespace detail;
    return {
        {"sigma.numerator", numerator_tensor(p.sigma)},
        {"sigma.denominator", vector_tensor(p.sigma.denominator)},
        {"sigma.feedthrough", matrix_tensor(p.sigma.feedthrough)},
        {"sigma_r.numerator", numerator_tensor(p.sigma_r)},
        {"sigma_r.denominator", vector_tensor(p.sigma_r.denominator)},
        {"sigma_r.feedthrough", matrix_tensor(p.sigma_r.feedthrough)},
        {"embeddings", matrix_tensor(p.embeddings)},
        {"readout.weight", matrix_tensor(p.readout)},
        {"readout.bias", vector_tensor(p.bias)},
    };
}

inline GeometricParams from_param_list(const GeometricConfig& c, const ad::ParamList& list) {
    using namespace detail;
    const std::size_t q = c.order(), m = c.m;
    GeometricParams p;
    p.sigma = ad::to_transfer_function(find_param(list, "sigma.numerator", {q, m, m}),
                                       find_param(list, "sigma.denominator", {q}),
                                       find_param(list, "sigma.feedthrough", {m, m}));
    p.sigma_r = ad::to_transfer_function(find_param(list, "sigma_r.numerator", {c.nu_r, 1, m}),
                                         find_param(list, "sigma_r.denominator", {c.nu_r}),
                                         find_param(list, "sigma_r.feedthrough", {1, m}));
    p.embeddings = tensor_matrix(find_param(list, "embeddings", {c.vocab, m}));
    p.readout = tensor_matrix(find_param(list, "readout.weight", {c.classes, m}));
    p.bias = tensor_vector(find_param(list, "readout.bias", {c.classes}));
    return p;
}

/// Convex-combination gate: y(t+1) = y(t) + (ys(t) - y(t)) s(t) from y(0) = y0.
/// `s` has one channel; returns y(1..l).
inline SignalBlock gate_scan(const SignalBlock& ys, const SignalBlock& s, const VectorXd& y0) {
    if (s.channels() != 1 || s.batch() != ys.batch() || s.length() != ys.length())
        throw DimensionError("gate_scan: gate must be one scalar per sample and step");
    if (static_cast<std::size_t>(y0.size()) != ys.channels())
        throw DimensionError("gate_scan: y0 length != channels");
    for (double v : s.values())
        if (v < 0.0 || v > 1.0) throw ContractError("gate_scan: gate value outside [0, 1]");  // NaN propagates
    SignalBlock y(ys.batch(), ys.length(), ys.channels());
    for (std::size_t b = 0; b < ys.batch(); ++b)
        for (std::size_t c = 0; c < ys.channels(); ++c) {
            double cur = y0[static_cast<Eigen::Index>(c)];
            for (std::size_t t = 0; t < ys.length(); ++t) {
                cur += (ys(b, t, c) - cur) * s(b, t, 0);
                y(b, t, c) = cur;
            }
        }
    return y;
}

struct GeometricTrace {
    SignalBlock u, ys, r, s, y;
};

struct GeometricOutput {
    MatrixXd logits;  // batch x classes
    GeometricTrace trace;
};

inline SignalBlock embed_tokens(const MatrixXd& table, const SequenceBatch& tokens) {
    if (static_cast<std::size_t>(table.rows()) != tokens.vocab)
        throw DimensionError("embedding table rows != vocabulary size");
    tokens.check_range();
    SignalBlock u(tokens.batch, tokens.length, static_cast<std::size_t>(table.cols()));
    for (std::size_t b = 0; b < tokens.batch; ++b)
        for (std::size_t t = 0; t < tokens.length; ++t)
            Eigen::Map<VectorXd>(u.at(b, t).data(), table.cols()) = table.row(tokens.token(b, t)).transpose();
    return u;
}

inline MatrixXd readout_logits(const SignalBlock& y, Pooling pooling, const MatrixXd& W, const VectorXd& bias) {
    MatrixXd logits(static_cast<Eigen::Index>(y.batch()), W.rows());
    VectorXd feat(W.cols());
    for (std::size_t b = 0; b < y.batch(); ++b) {
        if (pooling == Pooling::last) {
            feat = Eigen::Map<const VectorXd>(y.at(b, y.length() - 1).data(), W.cols());
        } else {
            feat.setZero();
            for (std::size_t t = 0; t < y.length(); ++t) feat += Eigen::Map<const VectorXd>(y.at(b, t).data(), W.cols());
            feat /= static_cast<double>(y.length());
        }
        logits.row(static_cast<Eigen::Index>(b)) = (W * feat + bias).transpose();
    }
    return logits;
}

/// Full pipeline: u = embed, ys = Sigma u, r = Sigma_r (ys - u), s = sigmoid(r),
/// y = gate_scan(ys, s, 0), logits from y. `fft` mode applies the transfer
/// functions in the frequency domain; `recurrent` simulates their
/// controllable canonical realizations from zero state.
inline GeometricOutput geometric_forward(const GeometricModel& model, const SequenceBatch& tokens,
                                         ApplyMode mode = ApplyMode::fft, std::size_t pad = 2) {
    const auto& p = model.params;
    GeometricOutput out;
    auto& tr = out.trace;
    tr.u = embed_tokens(p.embeddings, tokens);
    auto apply = [&](const TransferFunction& tf, const SignalBlock& x) {
        return mode == ApplyMode::fft ? fft_apply(tf, x, pad) : simulate_ss(realize_ccf(tf), x);
    };
    tr.ys = apply(p.sigma, tr.u);
    SignalBlock resid = tr.ys;
    for (std::size_t i = 0; i < resid.size(); ++i) resid.values()[i] -= tr.u.values()[i];
    tr.r = apply(p.sigma_r, resid);
    tr.s = tr.r;
    for (auto& v : tr.s.values()) v = ad::sigmoid(v);
    tr.y = gate_scan(tr.ys, tr.s, VectorXd::Zero(static_cast<Eigen::Index>(model.config.m)));
    out.logits = readout_logits(tr.y, model.config.pooling, p.readout, p.bias);
    return out;
}

/// Parameter leaves of the geometric model on a tape, in to_param_list order.
struct GeometricVars {
    ad::TfVars sigma, sigma_r;
    ad::Var embeddings, readout, bias;
};

inline GeometricVars push_parameters(ad::Tape& tape, const GeometricParams& p) {
    auto list = to_param_list(p);
    std::vector<ad::Var> v;
    for (auto& e : list) v.push_back(tape.parameter(e.name, std::move(e.tensor)));
    return {{v[0], v[1], v[2]}, {v[3], v[4], v[5]}, v[6], v[7], v[8]};
}

/// Records the forward pass on `tape`; returns the logits variable.
inline ad::Var record_geometric(ad::Tape& tape, const GeometricVars& vars, const GeometricConfig& c,
                                const SequenceBatch& tokens, ApplyMode mode, std::size_t pad = 2) {
    auto apply = [&](const ad::TfVars& tf, ad::Var x) {
        return mode == ApplyMode::fft ? ad::tf_fft(tape, tf, x, pad) : ad::tf_recurrent(tape, tf, x);
    };
    const ad::Var u = ad::embed(tape, vars.embeddings, tokens);
    const ad::Var ys = apply(vars.sigma, u);
    const ad::Var r = apply(vars.sigma_r, ad::subtract(tape, ys, u));
    const ad::Var s = ad::sigmoid(tape, r);
    const ad::Var y = ad::gate_scan(tape, ys, s);
    const ad::Var feat = c.pooling == Pooling::last ? ad::last_step(tape, y) : ad::mean_time(tape, y);
    return ad::affine(tape, feat, vars.readout, vars.bias);
}

/// Token-by-token inference. Sigma runs in controllable canonical form
/// (m*q states), the residual generator in observable canonical form (nu_r
/// states), plus the gate output y (m values); all start at zero.
class GeometricStream {
public:
    explicit GeometricStream(const GeometricModel& model)
        : config_(model.config), params_(model.params),
          sigma_(realize_ccf(model.params.sigma)), residual_(realize_ocf(model.params.sigma_r)) {
        reset();
    }

    void reset() {
        h_sigma_ = VectorXd::Zero(sigma_.states());
        h_r_ = VectorXd::Zero(residual_.states());
        y_ = VectorXd::Zero(static_cast<Eigen::Index>(config_.m));
        sum_ = VectorXd::Zero(static_cast<Eigen::Index>(config_.m));
        steps_ = 0;
    }

    /// Reals carried between steps (excluding the running sum kept for
    /// mean pooling).
    std::size_t state_size() const {
        return static_cast<std::size_t>(h_sigma_.size() + h_r_.size() + y_.size());
    }

    /// Advances one token; returns the logits read from the updated output.
    VectorXd step(int token) {
        if (token < 0 || static_cast<std::size_t>(token) >= config_.vocab)
            throw ContractError("GeometricStream: token out of range");
        const VectorXd u = params_.embeddings.row(token).transpose();
        const VectorXd ys = sigma_.C * h_sigma_ + sigma_.D * u;
        h_sigma_ = sigma_.A * h_sigma_ + sigma_.B * u;
        const VectorXd resid = ys - u;
        const double r = (residual_.C * h_r_ + residual_.D * resid)(0);
        h_r_ = residual_.A * h_r_ + residual_.B * resid;
        const double s = ad::sigmoid(r);
        y_ += (ys - y_) * s;
        sum_ += y_;
        ++steps_;
        const VectorXd feat = config_.pooling == Pooling::last ? y_ : VectorXd(sum_ / static_cast<double>(steps_));
        return params_.readout * feat + params_.bias;
    }

    const VectorXd& output() const { return y_; }

private:
    GeometricConfig config_;
    GeometricParams params_;
    StateSpaceSystem sigma_, residual_;
    VectorXd h_sigma_, h_r_, y_, sum_;
    std::size_t steps_ = 0;
};

}  // namespace gssm
