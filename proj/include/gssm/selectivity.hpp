#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "gssm/errors.hpp"
#include "gssm/lti.hpp"
#include "gssm/tasks.hpp"

namespace gssm {

/// Embeddings of the two token classes of the selective-copying demo.
struct TokenPairEmbedding {
    Eigen::Vector3d data_vector;
    Eigen::Vector3d blank_vector;

    /// The rounded vectors used by the printed demo system.
    static TokenPairEmbedding reference() {
        return {Eigen::Vector3d(-4.11, 4.58, 0.60), Eigen::Vector3d(9.05, -11.34, -0.04)};
    }
};

/// The printed three-state demo system: B = I, y = C h, values as rounded
/// for publication.
inline StateSpaceSystem paper_example_system() {
    MatrixXd A(3, 3);
    A << 1.48, 1.14, 0.42,
        -1.36, -1.04, -0.16,
         0.01, 0.01, 0.46;
    MatrixXd C(1, 3);
    C << 0.1270, 0.0975, 0.9575;
    return StateSpaceSystem(A, MatrixXd::Identity(3, 3), C, MatrixXd::Zero(1, 3));
}

/// Builds (A, B = I, C) such that blank inputs only ever excite the
/// unobservable A-invariant line span{blank}:
///   C blank = 0, C data = response, A blank = lambda blank, A data = mu blank,
/// and A vanishes on blank x data. From zero state the output is exactly
/// `response` one step after a data input and 0 otherwise.
inline StateSpaceSystem design_selective_system(const TokenPairEmbedding& emb, double response,
                                                double lambda, double mu) {
    if (!(std::abs(lambda) < 1.0)) throw ContractError("design_selective_system: need |lambda| < 1");
    const Eigen::Vector3d& b = emb.blank_vector;
    const Eigen::Vector3d& d = emb.data_vector;
    const double nb = b.norm(), nd = d.norm();
    if (nb == 0.0 || nd == 0.0) throw DesignError("design_selective_system: zero embedding vector");
    const Eigen::Vector3d w = b.cross(d);
    // |sin(angle)| between the two embeddings
    if (w.norm() / (nb * nd) < 1e-6)
        throw DesignError("design_selective_system: embeddings are (nearly) parallel");

    Eigen::Matrix3d V;
    V << b, d, w / w.norm();
    const Eigen::Matrix3d Vinv = V.inverse();
    Eigen::Matrix3d image;
    image << lambda * b, mu * b, Eigen::Vector3d::Zero();
    const MatrixXd A = image * Vinv;
    const MatrixXd C = Eigen::RowVector3d(0.0, response, 0.0) * Vinv;
    return StateSpaceSystem(A, MatrixXd::Identity(3, 3), C, MatrixXd::Zero(1, 3));
}

/// One demo row: class of the input at time t and the output it causes,
/// y(t+1).
struct SelectiveTraceRow {
    int label;  // 0 blank, 1 data
    double output;
};

/// Drives `sys` from zero state with the embedded label sequence.
inline std::vector<SelectiveTraceRow> run_selective_trace(const StateSpaceSystem& sys,
                                                          const TokenPairEmbedding& emb,
                                                          const std::vector<int>& labels) {
    // one trailing zero input so that the response to the last label is observed
    SignalBlock u(1, labels.size() + 1, 3);
    for (std::size_t t = 0; t < labels.size(); ++t) {
        const Eigen::Vector3d& v = labels[t] ? emb.data_vector : emb.blank_vector;
        for (int c = 0; c < 3; ++c) u(0, t, static_cast<std::size_t>(c)) = v[c];
    }
    const SignalBlock y = simulate_ss(sys, u);
    std::vector<SelectiveTraceRow> rows(labels.size());
    for (std::size_t t = 0; t < labels.size(); ++t) rows[t] = {labels[t], y(0, t + 1, 0)};
    return rows;
}

inline std::vector<SelectiveTraceRow> run_selective_demo(std::size_t length, std::uint64_t seed) {
    if (length < 2) throw ContractError("run_selective_demo: length must be >= 2");
    return run_selective_trace(paper_example_system(), TokenPairEmbedding::reference(),
                               gen_selective_copying(length, seed));
}

}  // namespace gssm
