#include <gtest/gtest.h>

#include <cmath>

#include "gssm/geometric.hpp"
#include "test_util.hpp"

using namespace gssm;

namespace {

SequenceBatch random_tokens(std::size_t batch, std::size_t len, std::size_t vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
    SequenceBatch s;
    s.batch = batch;
    s.length = len;
    s.vocab = vocab;
    s.classes = vocab;
    s.tokens.resize(batch * len);
    for (auto& v : s.tokens) v = d(rng);
    s.targets.assign(batch, 0);
    return s;
}

SignalBlock constant(std::size_t len, std::size_t ch, double v) {
    SignalBlock s(1, len, ch);
    for (auto& x : s.values()) x = v;
    return s;
}

}  // namespace

TEST(GateScan, NearOnePropagatesCandidate) {
    std::mt19937_64 rng(1);
    const auto ys = testutil::random_signal(1, 20, 3, rng);
    const auto y = gate_scan(ys, constant(20, 1, 1.0 - 1e-9), VectorXd::Constant(3, 5.0));
    for (std::size_t t = 0; t < 20; ++t)
        for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(y(0, t, c), ys(0, t, c), 1e-6);
}

TEST(GateScan, NearZeroRetainsState) {
    std::mt19937_64 rng(2);
    const auto ys = testutil::random_signal(1, 20, 2, rng);
    const VectorXd y0(Eigen::Vector2d(0.3, -0.7));
    const auto y = gate_scan(ys, constant(20, 1, 1e-12), y0);
    for (std::size_t t = 0; t < 20; ++t)
        for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(y(0, t, c), y0[static_cast<Eigen::Index>(c)], 1e-9);
}

TEST(GateScan, HalfGateClosedForm) {
    const auto y = gate_scan(constant(30, 1, 1.0), constant(30, 1, 0.5), VectorXd::Zero(1));
    for (std::size_t t = 0; t < 30; ++t) EXPECT_NEAR(y(0, t, 0), 1.0 - std::pow(2.0, -static_cast<double>(t + 1)), 1e-15);
}

TEST(GateScan, RejectsGateOutsideUnitInterval) {
    EXPECT_THROW(gate_scan(constant(4, 1, 1.0), constant(4, 1, 1.5), VectorXd::Zero(1)), ContractError);
    EXPECT_THROW(gate_scan(constant(4, 1, 1.0), constant(4, 1, -0.1), VectorXd::Zero(1)), ContractError);
}

TEST(GateScan, StaysInConvexHull) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unit(0.01, 0.99);
    for (int trial = 0; trial < 20; ++trial) {
        const auto ys = testutil::random_signal(2, 40, 3, rng);
        SignalBlock s(2, 40, 1);
        for (auto& v : s.values()) v = unit(rng);
        const VectorXd y0 = testutil::randn(3, 1, rng);
        const auto y = gate_scan(ys, s, y0);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 3; ++c) {
                double lo = y0[static_cast<Eigen::Index>(c)], hi = lo;
                for (std::size_t t = 0; t < 40; ++t) {
                    lo = std::min(lo, ys(b, t, c));
                    hi = std::max(hi, ys(b, t, c));
                    EXPECT_GE(y(b, t, c), lo - 1e-12);
                    EXPECT_LE(y(b, t, c), hi + 1e-12);
                }
            }
    }
}

TEST(GeometricForward, ZeroModelGivesBias) {
    GeometricConfig c{2, 1, 1, 2, 5, 5, Pooling::last};
    auto p = init_geometric(c, 0);
    for (auto& n : p.sigma.numerator) n.setZero();
    p.sigma.feedthrough.setZero();
    for (auto& n : p.sigma_r.numerator) n.setZero();
    p.sigma_r.feedthrough.setZero();
    p.bias = VectorXd::LinSpaced(5, 0.0, 1.0);
    const auto out = geometric_forward({c, p}, random_tokens(3, 12, 5, 1));
    for (double v : out.trace.ys.values()) EXPECT_EQ(v, 0.0);
    for (double v : out.trace.s.values()) EXPECT_EQ(v, 0.5);
    for (double v : out.trace.y.values()) EXPECT_EQ(v, 0.0);
    for (Eigen::Index b = 0; b < 3; ++b)
        for (Eigen::Index k = 0; k < 5; ++k) EXPECT_EQ(out.logits(b, k), p.bias[k]);
}

TEST(GeometricForward, FftAndRecurrentAgree) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 rng(seed + 100);
        auto model = testutil::small_geometric(seed);
        model.params.sigma = testutil::random_tf(4, 2, 2, 0.8, rng);
        const auto tokens = random_tokens(2, 64, 8, seed);
        const auto a = geometric_forward(model, tokens, ApplyMode::fft);
        const auto b = geometric_forward(model, tokens, ApplyMode::recurrent);
        EXPECT_LT(testutil::max_abs_diff(a.trace.ys, b.trace.ys), 1e-6);
        EXPECT_LT(testutil::max_abs_diff(a.trace.r, b.trace.r), 1e-6);
        EXPECT_LT(testutil::max_abs_diff(a.trace.s, b.trace.s), 1e-6);
        EXPECT_LT(testutil::max_abs_diff(a.trace.y, b.trace.y), 1e-6);
        EXPECT_LT((a.logits - b.logits).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(GeometricForward, GateIsOneScalarPerStep) {
    const auto model = testutil::small_geometric(1);
    const auto out = geometric_forward(model, random_tokens(2, 9, 8, 3));
    EXPECT_EQ(out.trace.s.channels(), 1u);
    EXPECT_EQ(out.trace.r.channels(), 1u);
    EXPECT_EQ(out.trace.y.channels(), 2u);
}

TEST(GeometricForward, OutputInConvexHullOfCandidates) {
    const auto model = testutil::small_geometric(4);
    const auto out = geometric_forward(model, random_tokens(3, 32, 8, 5));
    const auto& ys = out.trace.ys;
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t c = 0; c < 2; ++c) {
            double lo = 0.0, hi = 0.0;  // y(0) = 0
            for (std::size_t t = 0; t < 32; ++t) {
                lo = std::min(lo, ys(b, t, c));
                hi = std::max(hi, ys(b, t, c));
                EXPECT_GE(out.trace.y(b, t, c), lo - 1e-12);
                EXPECT_LE(out.trace.y(b, t, c), hi + 1e-12);
            }
        }
}

TEST(GeometricForward, RejectsOutOfRangeToken) {
    auto tokens = random_tokens(1, 4, 8, 0);
    tokens.tokens[0] = -1;
    EXPECT_THROW(geometric_forward(testutil::small_geometric(0), tokens), ContractError);
}

TEST(GeometricForward, SelectionHasMemory) {
    // Sigma = 2I makes the residual equal u; Sigma_r sums the previous residual
    GeometricConfig c{2, 1, 1, 1, 4, 4, Pooling::last};
    auto p = init_geometric(c, 0);
    for (auto& n : p.sigma.numerator) n.setZero();
    p.sigma.feedthrough = 2.0 * MatrixXd::Identity(2, 2);  // ys - u = u
    p.sigma_r = TransferFunction({MatrixXd::Ones(1, 2)}, VectorXd::Zero(1), MatrixXd::Zero(1, 2));
    p.embeddings = MatrixXd::Identity(4, 2) + MatrixXd::Constant(4, 2, 0.1);
    SequenceBatch s;
    s.batch = 2;
    s.length = 3;
    s.vocab = s.classes = 4;
    s.tokens = {0, 1, 2, 1, 3, 2};  // same token at t = 2, different before
    s.targets = {0, 0};
    const auto out = geometric_forward({c, p}, s);
    EXPECT_GT(std::abs(out.trace.s(0, 2, 0) - out.trace.s(1, 2, 0)), 1e-3);
}

TEST(GeometricStream, MatchesRecurrentForward) {
    for (const Pooling pooling : {Pooling::last, Pooling::mean}) {
        auto model = testutil::small_geometric(7);
        model.config.pooling = pooling;
        const auto tokens = random_tokens(3, 16, 8, 2);
        const auto batch = geometric_forward(model, tokens, ApplyMode::recurrent);
        for (std::size_t b = 0; b < 3; ++b) {
            GeometricStream stream(model);
            VectorXd logits;
            for (std::size_t t = 0; t < 16; ++t) {
                logits = stream.step(tokens.token(b, t));
                for (std::size_t c = 0; c < 2; ++c)
                    EXPECT_NEAR(stream.output()[static_cast<Eigen::Index>(c)], batch.trace.y(b, t, c), 1e-12);
            }
            EXPECT_LT((logits - batch.logits.row(static_cast<Eigen::Index>(b)).transpose()).cwiseAbs().maxCoeff(), 1e-12);
        }
    }
}

TEST(GeometricStream, FirstStepUsesFeedthroughOnly) {
    const auto model = testutil::small_geometric(8);
    GeometricStream stream(model);
    stream.step(3);
    const VectorXd u = model.params.embeddings.row(3).transpose();
    const VectorXd ys = model.params.sigma.feedthrough * u;
    const double r = (model.params.sigma_r.feedthrough * (ys - u))(0);
    const double s = 1.0 / (1.0 + std::exp(-r));
    EXPECT_LT((stream.output() - s * ys).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(GeometricStream, StateSize) {
    GeometricConfig c{3, 2, 1, 4, 8, 8, Pooling::last};
    GeometricStream stream({c, init_geometric(c, 0)});
    EXPECT_EQ(stream.state_size(), 3u * 3 + 4 + 3);
}

TEST(GeometricConfigCount, FormulaAndBand) {
    GeometricConfig c{2, 2, 2, 4, 8, 8, Pooling::last};
    const std::size_t q = 4, m = 2, nr = 4, N = 8;
    const std::size_t ssm = m * m * q + q + m * m + m * nr + nr + m;
    EXPECT_EQ(ssm_parameter_count(c), ssm);
    EXPECT_EQ(total_parameter_count(c), ssm + N * m + N * m + N);
    EXPECT_GE(ssm, 30u);
    EXPECT_LE(ssm, 80u);
    std::size_t counted = 0;
    for (const auto& e : to_param_list(init_geometric(c, 0))) counted += e.tensor.size();
    EXPECT_EQ(counted, total_parameter_count(c));
}
