#include <gtest/gtest.h>

#include <cmath>

#include "gssm/train.hpp"
#include "test_util.hpp"

using namespace gssm;

namespace {

SequenceBatch random_batch(std::size_t batch, std::size_t len, std::size_t vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
    SequenceBatch s;
    s.batch = batch;
    s.length = len;
    s.vocab = vocab;
    s.classes = vocab;
    s.tokens.resize(batch * len);
    for (auto& v : s.tokens) v = d(rng);
    for (std::size_t b = 0; b < batch; ++b) s.targets.push_back(d(rng));
    return s;
}

MambaModel small_mamba(std::uint64_t seed) {
    MambaConfig c;
    c.m = 3;
    c.n = 2;
    c.vocab = 6;
    c.classes = 6;
    return {c, init_mamba(c, seed)};
}

}  // namespace

TEST(Gradients, GeometricFftMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Model model = testutil::small_geometric(seed);
        EXPECT_LE(testutil::gradient_check(model, random_batch(3, 16, 8, seed), {ApplyMode::fft, 2}), 1e-4)
            << "seed " << seed;
    }
}

TEST(Gradients, GeometricRecurrentMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Model model = testutil::small_geometric(seed);
        EXPECT_LE(testutil::gradient_check(model, random_batch(3, 16, 8, seed), {ApplyMode::recurrent, 2}), 1e-4)
            << "seed " << seed;
    }
}

TEST(Gradients, GeometricMeanPooling) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        auto g = testutil::small_geometric(seed);
        g.config.pooling = Pooling::mean;
        EXPECT_LE(testutil::gradient_check(Model(g), random_batch(2, 12, 8, seed + 50)), 1e-4);
    }
}

TEST(Gradients, BaselineMatchesFiniteDifferences) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Model model = small_mamba(seed);
        EXPECT_LE(testutil::gradient_check(model, random_batch(3, 16, 6, seed)), 1e-4) << "seed " << seed;
    }
}

TEST(Gradients, FftAndRecurrentModesAgree) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Model model = testutil::small_geometric(seed);
        const auto batch = random_batch(4, 16, 8, seed + 7);
        const auto a = loss_and_grad(model, batch, {ApplyMode::fft, 2});
        const auto b = loss_and_grad(model, batch, {ApplyMode::recurrent, 2});
        EXPECT_NEAR(a.loss, b.loss, 1e-10);
        for (std::size_t i = 0; i < a.grads.size(); ++i)
            for (std::size_t k = 0; k < a.grads[i].tensor.size(); ++k)
                EXPECT_NEAR(a.grads[i].tensor[k], b.grads[i].tensor[k], 1e-5) << a.grads[i].name;
    }
}

TEST(Gradients, ZeroModelBiasGradient) {
    GeometricConfig c{2, 1, 1, 2, 5, 5, Pooling::last};
    auto p = init_geometric(c, 0);
    for (auto& n : p.sigma.numerator) n.setZero();
    p.sigma.denominator.setZero();
    p.sigma.feedthrough.setZero();
    for (auto& n : p.sigma_r.numerator) n.setZero();
    p.sigma_r.denominator.setZero();
    p.sigma_r.feedthrough.setZero();
    p.embeddings.setZero();
    p.readout.setZero();
    p.bias = VectorXd::LinSpaced(5, -1.0, 1.0);
    const auto batch = random_batch(6, 8, 5, 3);
    const auto lg = loss_and_grad(Model(GeometricModel{c, p}), batch);
    // mean over samples of softmax(bias) - onehot(target)
    const VectorXd prob = p.bias.array().exp() / p.bias.array().exp().sum();
    VectorXd expected = VectorXd::Zero(5);
    for (int t : batch.targets) {
        expected += prob;
        expected[t] -= 1.0;
    }
    expected /= 6.0;
    const auto& gb = lg.grads.back();
    ASSERT_EQ(gb.name, "readout.bias");
    for (Eigen::Index k = 0; k < 5; ++k) EXPECT_NEAR(gb.tensor[static_cast<std::size_t>(k)], expected[k], 1e-14);
}

TEST(Gradients, AbsentTokensHaveZeroEmbeddingGradient) {
    const Model model = testutil::small_geometric(2);
    auto batch = random_batch(4, 10, 8, 1);
    for (auto& v : batch.tokens) v %= 5;  // tokens 5..7 never appear
    const auto lg = loss_and_grad(model, batch);
    for (const auto& g : lg.grads)
        if (g.name == "embeddings")
            for (std::size_t row = 5; row < 8; ++row)
                for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(g.tensor[row * 2 + c], 0.0);
}

TEST(Gradients, RetainedElementsIndependentOfOrder) {
    std::vector<std::size_t> counts;
    for (std::size_t q : {4, 16, 64}) {
        GeometricConfig c{4, q / 2, q - q / 2, q, 8, 8, Pooling::last};
        const Model model = GeometricModel{c, init_geometric(c, 0)};
        counts.push_back(loss_and_grad(model, random_batch(2, 256, 8, 0)).retained_elements);
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    EXPECT_LT(static_cast<double>(*hi - *lo) / static_cast<double>(*lo), 0.10);
}

TEST(Gradients, EmptyBatchRejected) {
    SequenceBatch empty;
    empty.vocab = empty.classes = 8;
    EXPECT_THROW(loss_and_grad(Model(testutil::small_geometric(0)), empty), ContractError);
}

TEST(Gradients, NonFiniteLossNamesParameterBlock) {
    auto g = testutil::small_geometric(0);
    g.params.readout(0, 0) = std::numeric_limits<double>::infinity();
    try {
        loss_and_grad(Model(g), random_batch(2, 8, 8, 0));
        FAIL() << "expected NonFiniteError";
    } catch (const NonFiniteError& e) {
        EXPECT_NE(std::string(e.what()).find("readout"), std::string::npos) << e.what();
    }
}

namespace {

ad::ParamList scalar_params(double v) {
    ad::Tensor t({1});
    t[0] = v;
    return {{"w", t}};
}

}  // namespace

TEST(Optimizer, ZeroGradientLeavesParameters) {
    auto p = scalar_params(1.5);
    AdamState st;
    optimizer_step(p, scalar_params(0.0), st, {});
    EXPECT_EQ(p[0].tensor[0], 1.5);
}

TEST(Optimizer, FirstStepMagnitudeIsLearningRate) {
    for (double g : {1e-3, 0.2, -0.7, 50.0}) {
        auto p = scalar_params(0.0);
        AdamState st;
        AdamConfig cfg;
        cfg.lr = 0.01;
        cfg.clip_norm = 0.0;
        optimizer_step(p, scalar_params(g), st, cfg);
        EXPECT_NEAR(p[0].tensor[0], -0.01 * g / (std::abs(g) + 1e-8), 1e-12);
    }
}

TEST(Optimizer, Deterministic) {
    auto a = scalar_params(0.3), b = scalar_params(0.3);
    AdamState sa, sb;
    for (int i = 0; i < 5; ++i) {
        optimizer_step(a, scalar_params(0.1 * i - 0.2), sa, {});
        optimizer_step(b, scalar_params(0.1 * i - 0.2), sb, {});
    }
    EXPECT_EQ(a[0].tensor[0], b[0].tensor[0]);
}

TEST(Optimizer, ClippingScalesGradient) {
    // the first moment after one step holds (1 - beta1) times the clipped gradient
    ad::ParamList p{{"a", ad::Tensor({2})}};
    ad::ParamList g{{"a", ad::Tensor({2})}};
    g[0].tensor[0] = 3.0;
    g[0].tensor[1] = 4.0;
    EXPECT_DOUBLE_EQ(global_norm(g), 5.0);
    AdamState st;
    AdamConfig cfg;
    cfg.clip_norm = 1.0;
    optimizer_step(p, g, st, cfg);
    EXPECT_NEAR(st.first[0][0], 0.1 * 0.6, 1e-15);
    EXPECT_NEAR(st.first[0][1], 0.1 * 0.8, 1e-15);
}

TEST(Optimizer, ShapeMismatchRejected) {
    auto p = scalar_params(0.0);
    ad::ParamList g{{"w", ad::Tensor({2})}};
    AdamState st;
    EXPECT_THROW(optimizer_step(p, g, st, {}), DimensionError);
}

namespace {

TaskSpec ih_spec() {
    TaskSpec s;
    s.kind = TaskKind::induction_head;
    s.vocab = 8;
    s.length = 16;
    return s;
}

Model ih_geometric(std::uint64_t seed) {
    GeometricConfig c{2, 2, 2, 4, 8, 8, Pooling::last};
    return GeometricModel{c, init_geometric(c, seed)};
}

}  // namespace

TEST(Train, ZeroStepsIsChance) {
    TrainConfig cfg;
    cfg.steps = 0;
    cfg.eval_samples = 2000;
    cfg.eval_lengths = {16, 64};
    const auto res = train(ih_geometric(0), load_task(ih_spec()), cfg);
    ASSERT_EQ(res.history.size(), 1u);
    for (double a : res.history[0].accuracy) EXPECT_NEAR(a, 1.0 / 8.0, 0.03);
}

TEST(Train, FixedSeedIsBitIdentical) {
    TrainConfig cfg;
    cfg.steps = 40;
    cfg.eval_every = 20;
    cfg.eval_samples = 100;
    cfg.eval_lengths = {16, 32};
    std::vector<double> la, lb;
    const auto a = train(ih_geometric(1), load_task(ih_spec()), cfg, [&](std::size_t, double l) { la.push_back(l); });
    const auto b = train(ih_geometric(1), load_task(ih_spec()), cfg, [&](std::size_t, double l) { lb.push_back(l); });
    EXPECT_EQ(la, lb);
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].accuracy, b.history[i].accuracy);
        EXPECT_TRUE(a.history[i].loss == b.history[i].loss || (std::isnan(a.history[i].loss) && std::isnan(b.history[i].loss)));
    }
}

TEST(Train, DivergenceIsReported) {
    TrainConfig cfg;
    cfg.steps = 5;
    cfg.eval_samples = 50;
    cfg.eval_lengths = {16};
    auto g = std::get<GeometricModel>(ih_geometric(0));
    g.params.sigma.denominator[0] = std::nan("");
    const auto res = train(Model(g), load_task(ih_spec()), cfg);
    EXPECT_TRUE(res.diverged);
    EXPECT_FALSE(res.divergence.empty());
    EXPECT_EQ(res.steps_done, 0u);
}

TEST(Train, BlowUpKeepsLastFiniteParameters) {
    TrainConfig cfg;
    cfg.steps = 50;
    cfg.lr = 1e200;
    cfg.eval_samples = 50;
    cfg.eval_lengths = {16};
    const auto res = train(ih_geometric(0), load_task(ih_spec()), cfg);
    EXPECT_TRUE(res.diverged);
    EXPECT_LT(res.steps_done, 50u);
    for (const auto& p : parameters(res.model))
        for (double v : p.tensor.data) EXPECT_TRUE(std::isfinite(v)) << p.name;
}

TEST(Train, DefaultsLearnInductionHead) {
    TrainConfig cfg;  // library defaults
    cfg.eval_samples = 1000;
    cfg.eval_every = 0;
    cfg.eval_lengths = {16};
    const auto res = train(ih_geometric(0), load_task(ih_spec()), cfg);
    ASSERT_FALSE(res.diverged) << res.divergence;
    EXPECT_GE(res.history.back().accuracy[0], 0.95);
}
