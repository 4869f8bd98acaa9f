// One pass/fail line per acceptance criterion.
//   acceptance                 run all criteria
//   acceptance --criterion N   run criterion N only
// Exit status is non-zero when any criterion that ran failed.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <string>

#include <CLI11.hpp>

#include "gssm/experiment.hpp"
#include "test_util.hpp"

using namespace gssm;

#ifndef GSSM_MNIST_DIR
#define GSSM_MNIST_DIR "/root/data/mnist"
#endif

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v) { return fmt6(v); }

std::string join(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? " " : "") + fmt(v[i]);
    return s;
}

SequenceBatch random_batch(std::size_t batch, std::size_t len, std::size_t vocab, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> d(0, static_cast<int>(vocab) - 1);
    SequenceBatch s;
    s.batch = batch;
    s.length = len;
    s.vocab = s.classes = vocab;
    s.tokens.resize(batch * len);
    for (auto& v : s.tokens) v = d(rng);
    for (std::size_t b = 0; b < batch; ++b) s.targets.push_back(d(rng));
    return s;
}

ExperimentConfig config_with_seed(const std::string& name, std::uint64_t seed) {
    auto c = load_config(std::string(GSSM_SOURCE_DIR) + "/configs/" + name);
    c.train.seed = seed;
    c.train.eval_every = 0;
    return c;
}

// Trains and evaluates at every length with 2000 fresh samples.
std::vector<double> train_and_eval(const ExperimentConfig& c) {
    const TaskData data = load_task(c.task);
    const auto res = train(make_model(c), data, c.train);
    if (res.diverged) return std::vector<double>(c.train.eval_lengths.size(), 0.0);
    return evaluate(res.model, data, c.train.eval_lengths, 2000);
}

bool recall_ok(const std::vector<double>& acc) {
    if (acc.empty() || acc[0] < 0.95) return false;
    return std::all_of(acc.begin(), acc.end(), [](double a) { return a >= 0.90; });
}

// Trains seeds 0..2 and returns the best accuracy row (first passing one, or
// the one with the highest worst-case accuracy).
std::vector<double> best_of_three(const std::string& name, std::string& log) {
    std::vector<double> best;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto acc = train_and_eval(config_with_seed(name, seed));
        log += " seed" + std::to_string(seed) + "=[" + join(acc) + "]";
        if (best.empty() || *std::min_element(acc.begin(), acc.end()) > *std::min_element(best.begin(), best.end()))
            best = acc;
        if (recall_ok(acc)) return acc;
    }
    return best;
}

Outcome selective_demo() {
    double worst_blank = 0.0, worst_data = 0.0;
    for (std::uint64_t seed = 0; seed < 1000; ++seed)
        for (const auto& row : run_selective_demo(64, seed)) {
            if (row.label) worst_data = std::max(worst_data, std::abs(row.output - 0.5));
            else worst_blank = std::max(worst_blank, std::abs(row.output));
        }
    return {worst_blank <= 0.07 && worst_data <= 0.07,
            "max |y| after blank " + fmt(worst_blank) + ", max |y-0.5| after data " + fmt(worst_data) + " (tol 0.07)"};
}

Outcome constructive_selectivity() {
    const auto emb = TokenPairEmbedding::reference();
    const auto sys = design_selective_system(emb, 0.5, 0.05, 0.0);
    double worst = 0.0;
    for (unsigned code = 0; code < 256; ++code) {
        std::vector<int> labels(8);
        for (std::size_t t = 0; t < 8; ++t) labels[t] = static_cast<int>((code >> t) & 1u);
        for (const auto& row : run_selective_trace(sys, emb, labels))
            worst = std::max(worst, std::abs(row.output - (row.label ? 0.5 : 0.0)));
    }
    return {worst <= 1e-10, "256 sequences, max error " + fmt(worst) + " (tol 1e-10)"};
}

Outcome representation_equivalence() {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 4), order(1, 8);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const auto po = dim(rng), pi = dim(rng);
        const auto q = static_cast<std::size_t>(order(rng));
        const auto tf = testutil::random_tf(q, po, pi, 0.8, rng);
        const auto u = testutil::random_signal(2, 64, static_cast<std::size_t>(pi), rng);
        const auto y_fft = fft_apply(tf, u);
        const auto y_ss = simulate_ss(realize_ccf(tf), u);
        double umax = 0.0;
        for (double v : u.values()) umax = std::max(umax, std::abs(v));
        worst = std::max(worst, testutil::max_abs_diff(y_fft, y_ss) / umax);
    }
    return {worst <= 1e-8, "50 systems, max |y_fft - y_ss| / |u|inf = " + fmt(worst) + " (tol 1e-8)"};
}

Outcome gradient_correctness() {
    double worst_g = 0.0, worst_s = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const Model g = testutil::small_geometric(seed);
        worst_g = std::max(worst_g, testutil::gradient_check(g, random_batch(3, 16, 8, seed)));
        MambaConfig c;
        c.m = 3;
        c.n = 2;
        c.vocab = c.classes = 6;
        const Model s = MambaModel{c, init_mamba(c, seed)};
        worst_s = std::max(worst_s, testutil::gradient_check(s, random_batch(3, 16, 6, seed)));
    }
    return {worst_g <= 1e-4 && worst_s <= 1e-4,
            "max relative error geometric " + fmt(worst_g) + ", selective " + fmt(worst_s) + " (tol 1e-4)"};
}

Outcome induction_head() {
    std::string log;
    const auto acc = best_of_three("ih_geometric.json", log);
    return {recall_ok(acc), "best [" + join(acc) + "] at L=16..1024;" + log};
}

Outcome extended_induction_head() {
    std::string log;
    const auto geo = best_of_three("eih_geometric.json", log);
    const auto base = train_and_eval(config_with_seed("eih_selective.json", 0));
    const auto& lengths = config_with_seed("eih_geometric.json", 0).train.eval_lengths;
    bool margin = true;
    for (std::size_t i = 0; i < lengths.size(); ++i)
        if (lengths[i] >= 64 && geo[i] - base[i] < 0.3) margin = false;
    const bool pass = recall_ok(geo) && base.back() <= 0.5 && margin;
    return {pass, "geometric [" + join(geo) + "], selective [" + join(base) + "], margin>=0.3 from L=64: " +
                      (margin ? "yes" : "no") + ";" + log};
}

Outcome memoryless_selection() {
    // baseline: the selection at t is a function of the token at t alone
    MambaConfig mc;
    mc.m = 16;
    mc.n = 8;
    const MambaModel mamba{mc, init_mamba(mc, 1)};
    std::mt19937_64 rng(7);
    bool baseline_same = true;
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_batch(1, 32, 8, static_cast<std::uint64_t>(trial));
        auto b = a;
        std::shuffle(b.tokens.begin(), b.tokens.begin() + 31, rng);
        const auto at = [&](const SequenceBatch& s) {
            return selection_parameters(mamba.params, mamba.params.embeddings.row(s.token(0, 31)).transpose());
        };
        const auto sa = at(a), sb = at(b);
        baseline_same = baseline_same && sa.delta == sb.delta && sa.bbar == sb.bbar && sa.cbar == sb.cbar;
    }
    // geometric: the residual filter has a pole at 0.5, so s(t) sees every earlier token
    GeometricConfig gc{2, 1, 1, 1, 8, 8, Pooling::last};
    auto p = init_geometric(gc, 0);
    for (auto& n : p.sigma.numerator) n.setZero();
    p.sigma.feedthrough = 2.0 * MatrixXd::Identity(2, 2);
    p.sigma_r = TransferFunction({MatrixXd::Ones(1, 2)}, VectorXd::Constant(1, -0.5), MatrixXd::Zero(1, 2));
    const GeometricModel geo{gc, p};
    int changed = 0, trials = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto a = random_batch(1, 32, 8, static_cast<std::uint64_t>(trial + 1000));
        auto b = a;
        std::shuffle(b.tokens.begin(), b.tokens.begin() + 31, rng);
        if (std::equal(a.tokens.begin(), a.tokens.end(), b.tokens.begin())) continue;
        ++trials;
        const double sa = geometric_forward(geo, a).trace.s(0, 31, 0);
        const double sb = geometric_forward(geo, b).trace.s(0, 31, 0);
        changed += sa != sb;
    }
    return {baseline_same && changed == trials,
            std::string("baseline selection unchanged in 100/100: ") + (baseline_same ? "yes" : "no") +
                ", geometric s(t) changed in " + std::to_string(changed) + "/" + std::to_string(trials)};
}

Outcome sequential_mnist() {
    const std::filesystem::path dir(GSSM_MNIST_DIR);
    auto c = load_config(std::string(GSSM_SOURCE_DIR) + "/configs/smnist_geometric.json");
    c.task.mnist_images = (dir / "images-idx3-ubyte").string();
    c.task.mnist_labels = (dir / "labels-idx1-ubyte").string();
    c.train.eval_every = 0;
    if (!std::filesystem::exists(c.task.mnist_images) || !std::filesystem::exists(c.task.mnist_labels))
        return {false, "MNIST IDX files not found in " + dir.string()};
    std::vector<double> losses;
    const auto t0 = std::chrono::steady_clock::now();
    const TaskData data = load_task(c.task);
    const auto res = train(make_model(c), data, c.train, [&](std::size_t, double l) { losses.push_back(l); });
    const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    if (res.diverged || losses.size() < 500) return {false, "training diverged: " + res.divergence};
    // loss drop: mean of steps 481-500 against mean of steps 1-20
    const double first = std::accumulate(losses.begin(), losses.begin() + 20, 0.0) / 20.0;
    const double at500 = std::accumulate(losses.begin() + 480, losses.begin() + 500, 0.0) / 20.0;
    const double drop = 1.0 - at500 / first;
    const double acc = evaluate(res.model, data, {784}, 2000)[0];
    return {acc >= 0.5 && drop >= 0.5 && minutes <= 60.0,
            "test accuracy " + fmt(acc) + " (>= 0.5), loss drop by step 500 " + fmt(drop) + " (>= 0.5), " +
                fmt(minutes) + " min"};
}

Outcome scaling() {
    const auto rep = run_bench(BenchSpec{});
    return {rep.retained_spread < 0.1 && rep.length_slope <= 1.3,
            "retained spread over q " + fmt(rep.retained_spread) + " (< 0.1), time slope vs l " +
                fmt(rep.length_slope) + " (<= 1.3), baseline slope vs n " + fmt(rep.state_slope)};
}

Outcome parameter_accounting() {
    const std::string dir = std::string(GSSM_SOURCE_DIR) + "/configs/";
    const auto g = ssm_parameter_count(make_model(load_config(dir + "ih_geometric.json")));
    const auto s = ssm_parameter_count(make_model(load_config(dir + "ih_selective.json")));
    return {g >= 30 && g <= 80 && s >= 500 && s <= 900,
            "geometric " + std::to_string(g) + " in [30, 80], selective " + std::to_string(s) + " in [500, 900]"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    int only = 0;
    app.add_option("--criterion", only, "Run one criterion (1-10)")->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);

    struct Criterion {
        std::string name;
        std::function<Outcome()> run;
        double max_seconds;
    };
    const std::vector<Criterion> criteria{
        {"selective-copying demo", selective_demo, 1},
        {"constructive selectivity", constructive_selectivity, 1},
        {"representation equivalence", representation_equivalence, 10},
        {"gradient correctness", gradient_correctness, 120},
        {"induction head", induction_head, 600},
        {"extended induction head", extended_induction_head, 1200},
        {"memoryless-selection witness", memoryless_selection, 60},
        {"sequential MNIST", sequential_mnist, 3600},
        {"scaling", scaling, 600},
        {"parameter accounting", parameter_accounting, 60},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (only && static_cast<std::size_t>(only) != i + 1) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (sec > criteria[i].max_seconds) {
            o.pass = false;
            o.detail += "; over the " + fmt(criteria[i].max_seconds) + " s budget";
        }
        std::printf("criterion %zu %s: %s (%.1f s) %s\n", i + 1, criteria[i].name.c_str(), o.pass ? "PASS" : "FAIL",
                    sec, o.detail.c_str());
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
