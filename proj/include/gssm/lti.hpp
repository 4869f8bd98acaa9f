#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gssm/errors.hpp"
#include "gssm/fft.hpp"
#include "gssm/signal.hpp"

namespace gssm {

using Eigen::MatrixXcd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using cplx = std::complex<double>;

/// Dense discrete-time realization
///   h(t+1) = A h(t) + B u(t),  y(t) = C h(t) + D u(t).
/// A zero-state system (n = 0) is a pure feedthrough.
struct StateSpaceSystem {
    MatrixXd A, B, C, D;

    StateSpaceSystem() = default;
    StateSpaceSystem(MatrixXd a, MatrixXd b, MatrixXd c, MatrixXd d)
        : A(std::move(a)), B(std::move(b)), C(std::move(c)), D(std::move(d)) {
        validate();
    }

    Eigen::Index states() const { return A.rows(); }
    Eigen::Index inputs() const { return D.cols(); }
    Eigen::Index outputs() const { return D.rows(); }

    void validate() const {
        const auto n = A.rows();
        if (A.cols() != n || B.rows() != n || C.cols() != n || C.rows() != D.rows() ||
            B.cols() != D.cols())
            throw DimensionError("StateSpaceSystem: inconsistent A/B/C/D dimensions");
    }
};

/// MIMO rational transfer function with a shared monic denominator
///   H(z) = D + (N_1 z^-1 + ... + N_q z^-q) / (1 + a_1 z^-1 + ... + a_q z^-q).
struct TransferFunction {
    std::vector<MatrixXd> numerator;  // q matrices, p_out x p_in
    VectorXd denominator;             // a_1..a_q
    MatrixXd feedthrough;             // p_out x p_in

    TransferFunction() = default;
    TransferFunction(std::vector<MatrixXd> num, VectorXd den, MatrixXd d)
        : numerator(std::move(num)), denominator(std::move(den)), feedthrough(std::move(d)) {
        validate();
    }

    static TransferFunction zero(std::size_t order, Eigen::Index outputs, Eigen::Index inputs) {
        return TransferFunction(std::vector<MatrixXd>(order, MatrixXd::Zero(outputs, inputs)),
                                VectorXd::Zero(static_cast<Eigen::Index>(order)),
                                MatrixXd::Zero(outputs, inputs));
    }

    std::size_t order() const { return numerator.size(); }
    Eigen::Index outputs() const { return feedthrough.rows(); }
    Eigen::Index inputs() const { return feedthrough.cols(); }

    /// p_out*p_in*q numerator + q denominator + p_out*p_in feedthrough.
    std::size_t parameter_count() const {
        const auto block = static_cast<std::size_t>(outputs() * inputs());
        return block * order() + order() + block;
    }

    void validate() const {
        if (static_cast<std::size_t>(denominator.size()) != numerator.size())
            throw DimensionError("TransferFunction: numerator/denominator order mismatch");
        for (const auto& n : numerator)
            if (n.rows() != outputs() || n.cols() != inputs())
                throw DimensionError("TransferFunction: numerator coefficient shape mismatch");
    }
};

/// Runs the state recursion from h(0) = h0 for every sample of `u`;
/// returns y(0..l-1).
inline SignalBlock simulate_ss(const StateSpaceSystem& sys, const SignalBlock& u,
                               const VectorXd& h0) {
    sys.validate();
    if (static_cast<Eigen::Index>(u.channels()) != sys.inputs())
        throw DimensionError("simulate_ss: input channels do not match B/D columns");
    if (h0.size() != sys.states())
        throw DimensionError("simulate_ss: initial state has wrong length");

    const auto p_in = sys.inputs();
    const auto p_out = sys.outputs();
    SignalBlock y(u.batch(), u.length(), static_cast<std::size_t>(p_out));
    VectorXd h(sys.states()), next(sys.states()), out(p_out);
    for (std::size_t b = 0; b < u.batch(); ++b) {
        h = h0;
        for (std::size_t t = 0; t < u.length(); ++t) {
            Eigen::Map<const VectorXd> ut(u.at(b, t).data(), p_in);
            out.noalias() = sys.D * ut;
            if (sys.states() > 0) {
                out.noalias() += sys.C * h;
                next.noalias() = sys.A * h;
                next.noalias() += sys.B * ut;
                h.swap(next);
            }
            Eigen::Map<VectorXd>(y.at(b, t).data(), p_out) = out;
        }
    }
    return y;
}

inline SignalBlock simulate_ss(const StateSpaceSystem& sys, const SignalBlock& u) {
    return simulate_ss(sys, u, VectorXd::Zero(sys.states()));
}

/// Markov parameters h(0..length-1): h(0) = D, then long division of the
/// numerator by the denominator.
inline std::vector<MatrixXd> impulse_response(const TransferFunction& tf, std::size_t length) {
    tf.validate();
    if (length == 0) throw ContractError("impulse_response: length must be >= 1");
    const std::size_t q = tf.order();
    // g = impulse response of 1 / a(z^-1)
    std::vector<double> g(length, 0.0);
    for (std::size_t t = 0; t < length; ++t) {
        double v = (t == 0) ? 1.0 : 0.0;
        for (std::size_t l = 1; l <= std::min(q, t); ++l) v -= tf.denominator[l - 1] * g[t - l];
        g[t] = v;
    }
    std::vector<MatrixXd> h(length, MatrixXd::Zero(tf.outputs(), tf.inputs()));
    h[0] = tf.feedthrough;
    for (std::size_t t = 1; t < length; ++t)
        for (std::size_t l = 1; l <= std::min(q, t); ++l) h[t] += tf.numerator[l - 1] * g[t - l];
    return h;
}

namespace detail {

/// Grid point k of a K-point grid, as the value taken by z^-1.
inline cplx grid_delay(std::size_t k, std::size_t K) {
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(K);
    return {std::cos(angle), std::sin(angle)};
}

/// Spectrum at bins 0..K/2 (the half spectrum used by the real FFT).
struct HalfGrid {
    std::vector<MatrixXcd> response;
};

inline cplx eval_denominator(const VectorXd& a, cplx zinv) {
    cplx acc = 0.0;
    for (Eigen::Index l = a.size(); l >= 1; --l) acc = (acc + a[l - 1]) * zinv;
    return 1.0 + acc;
}

inline MatrixXcd eval_numerator(const std::vector<MatrixXd>& num, cplx zinv, Eigen::Index rows,
                                Eigen::Index cols) {
    MatrixXcd acc = MatrixXcd::Zero(rows, cols);
    for (std::size_t l = num.size(); l >= 1; --l) {
        acc += num[l - 1].cast<cplx>();
        acc *= zinv;
    }
    return acc;
}

inline void check_grid_denominator(cplx den, std::size_t k, std::size_t K) {
    if (std::abs(den) < 1e-12)
        throw SingularGridError("transfer function pole on grid point " + std::to_string(k) +
                                " of " + std::to_string(K));
}

/// Half spectrum of the impulse response truncated to `length` taps and
/// zero-padded to K. With K >= 2 * length the circular product reproduces
/// causal convolution exactly on the first `length` samples; sampling H
/// itself would wrap taps length+1..K-1 back onto them.
inline HalfGrid truncated_half_grid(const TransferFunction& tf, std::size_t length, std::size_t K) {
    const auto h = impulse_response(tf, length);
    const auto po = tf.outputs(), pi = tf.inputs();
    const std::size_t ch = static_cast<std::size_t>(po * pi);
    RealFft& f = real_fft(K, ch, 2);
    auto buf = f.real();
    std::fill(buf.begin(), buf.end(), 0.0);
    for (std::size_t t = 0; t < length; ++t)
        for (Eigen::Index i = 0; i < po; ++i)
            for (Eigen::Index j = 0; j < pi; ++j) buf[t * ch + static_cast<std::size_t>(i * pi + j)] = h[t](i, j);
    f.forward();
    auto spec = f.spectrum();
    HalfGrid g;
    g.response.resize(f.bins());
    for (std::size_t k = 0; k < f.bins(); ++k) {
        g.response[k].resize(po, pi);
        for (Eigen::Index i = 0; i < po; ++i)
            for (Eigen::Index j = 0; j < pi; ++j) g.response[k](i, j) = spec[k * ch + static_cast<std::size_t>(i * pi + j)];
    }
    return g;
}

}  // namespace detail

/// H evaluated where z^-1 = exp(-2 pi i k / K), k = 0..K-1, i.e. the DFT of
/// the (K-aliased) impulse response.
inline std::vector<MatrixXcd> tf_eval_grid(const TransferFunction& tf, std::size_t K) {
    tf.validate();
    if (K == 0) throw ContractError("tf_eval_grid: grid size must be >= 1");
    std::vector<MatrixXcd> out(K);
    const MatrixXcd d = tf.feedthrough.cast<cplx>();
    for (std::size_t k = 0; k < K; ++k) {
        const cplx zinv = detail::grid_delay(k, K);
        const cplx den = detail::eval_denominator(tf.denominator, zinv);
        detail::check_grid_denominator(den, k, K);
        out[k] = d + detail::eval_numerator(tf.numerator, zinv, tf.outputs(), tf.inputs()) / den;
    }
    return out;
}

namespace detail {

/// Spectral multiply of every sample of `u` by a precomputed half grid.
inline SignalBlock apply_half_grid(const HalfGrid& grid, const SignalBlock& u, std::size_t K,
                                   Eigen::Index p_out) {
    const std::size_t len = u.length();
    const std::size_t p_in = u.channels();
    RealFft& in = real_fft(K, p_in);
    RealFft& out = real_fft(K, static_cast<std::size_t>(p_out), 1);
    const std::size_t bins = in.bins();
    SignalBlock y(u.batch(), len, static_cast<std::size_t>(p_out));
    const double scale = 1.0 / static_cast<double>(K);
    for (std::size_t b = 0; b < u.batch(); ++b) {
        auto buf = in.real();
        std::fill(buf.begin(), buf.end(), 0.0);
        std::copy_n(u.at(b, 0).data(), len * p_in, buf.begin());
        in.forward();
        auto xs = in.spectrum();
        auto ys = out.spectrum();
        for (std::size_t k = 0; k < bins; ++k) {
            Eigen::Map<const Eigen::VectorXcd> xk(xs.data() + k * p_in, static_cast<Eigen::Index>(p_in));
            Eigen::Map<Eigen::VectorXcd> yk(ys.data() + k * p_out, p_out);
            yk.noalias() = grid.response[k] * xk;
        }
        out.inverse();
        auto res = out.real();
        double* dst = y.at(b, 0).data();
        for (std::size_t i = 0; i < len * static_cast<std::size_t>(p_out); ++i) dst[i] = res[i] * scale;
    }
    return y;
}

}  // namespace detail

/// State-free application of `tf` to `u`: zero-pad to K = pad_factor * l,
/// multiply spectra by the truncated grid response, invert, keep the first
/// l samples. Equals causal convolution with the impulse response.
inline SignalBlock fft_apply(const TransferFunction& tf, const SignalBlock& u,
                             std::size_t pad_factor = 2) {
    tf.validate();
    if (static_cast<Eigen::Index>(u.channels()) != tf.inputs())
        throw DimensionError("fft_apply: input channels do not match transfer function");
    if (pad_factor < 2) throw ContractError("fft_apply: pad_factor must be >= 2");
    if (u.length() == 0) return SignalBlock(u.batch(), 0, static_cast<std::size_t>(tf.outputs()));
    const std::size_t K = pad_factor * u.length();
    const auto grid = detail::truncated_half_grid(tf, u.length(), K);
    return detail::apply_half_grid(grid, u, K, tf.outputs());
}

/// Block controllable canonical form, state dimension p_in * q. The state
/// holds the last q samples of the denominator-filtered input.
inline StateSpaceSystem realize_ccf(const TransferFunction& tf) {
    tf.validate();
    const auto q = static_cast<Eigen::Index>(tf.order());
    const auto p = tf.inputs();
    const auto n = p * q;
    MatrixXd A = MatrixXd::Zero(n, n), B = MatrixXd::Zero(n, p), C(tf.outputs(), n);
    for (Eigen::Index l = 0; l < q; ++l) {
        A.block(0, l * p, p, p) = -tf.denominator[l] * MatrixXd::Identity(p, p);
        C.block(0, l * p, tf.outputs(), p) = tf.numerator[static_cast<std::size_t>(l)];
        if (l + 1 < q) A.block((l + 1) * p, l * p, p, p) = MatrixXd::Identity(p, p);
    }
    if (q > 0) B.topRows(p) = MatrixXd::Identity(p, p);
    return StateSpaceSystem(std::move(A), std::move(B), std::move(C), tf.feedthrough);
}

/// Block observable canonical form, state dimension p_out * q. Smaller than
/// the controllable form for wide systems such as the 1 x m residual filter.
inline StateSpaceSystem realize_ocf(const TransferFunction& tf) {
    tf.validate();
    const auto q = static_cast<Eigen::Index>(tf.order());
    const auto p = tf.outputs();
    const auto n = p * q;
    MatrixXd A = MatrixXd::Zero(n, n), B(n, tf.inputs()), C = MatrixXd::Zero(p, n);
    for (Eigen::Index l = 0; l < q; ++l) {
        A.block(l * p, 0, p, p) = -tf.denominator[l] * MatrixXd::Identity(p, p);
        if (l + 1 < q) A.block(l * p, (l + 1) * p, p, p) = MatrixXd::Identity(p, p);
        B.block(l * p, 0, p, tf.inputs()) = tf.numerator[static_cast<std::size_t>(l)];
    }
    if (q > 0) C.leftCols(p) = MatrixXd::Identity(p, p);
    return StateSpaceSystem(std::move(A), std::move(B), std::move(C), tf.feedthrough);
}

/// Series connection u -> f -> g. State ordering is [h_f; h_g].
inline StateSpaceSystem compose_series(const StateSpaceSystem& g, const StateSpaceSystem& f) {
    f.validate();
    g.validate();
    if (f.outputs() != g.inputs())
        throw DimensionError("compose_series: output dimension of f must equal input of g");
    const auto nf = f.states(), ng = g.states();
    MatrixXd A = MatrixXd::Zero(nf + ng, nf + ng);
    A.topLeftCorner(nf, nf) = f.A;
    A.bottomLeftCorner(ng, nf) = g.B * f.C;
    A.bottomRightCorner(ng, ng) = g.A;
    MatrixXd B(nf + ng, f.inputs());
    B.topRows(nf) = f.B;
    B.bottomRows(ng) = g.B * f.D;
    MatrixXd C(g.outputs(), nf + ng);
    C.leftCols(nf) = g.D * f.C;
    C.rightCols(ng) = g.C;
    return StateSpaceSystem(std::move(A), std::move(B), std::move(C), g.D * f.D);
}

inline double spectral_radius(const MatrixXd& A) {
    if (A.rows() == 0) return 0.0;
    return Eigen::EigenSolver<MatrixXd>(A, false).eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace gssm
