#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gssm/errors.hpp"
#include "gssm/model.hpp"
#include "gssm/optim.hpp"
#include "gssm/tasks.hpp"

namespace gssm {

/// What to train on. Synthetic tasks are generated on the fly; sMNIST reads
/// an IDX pair whose first `train_count` images train and the following
/// `test_count` images evaluate.
struct TaskSpec {
    TaskKind kind = TaskKind::induction_head;
    std::size_t vocab = 8;
    std::size_t length = 16;
    std::size_t trigger_length = 1;
    bool random_middle = true;  // training batches only; evaluation keeps L/2-1
    std::uint64_t seed = 0;
    std::string mnist_images;
    std::string mnist_labels;
    std::size_t train_count = 8000;
    std::size_t test_count = 2000;

    std::size_t classes() const { return kind == TaskKind::smnist ? 10 : vocab; }
    std::size_t input_vocab() const { return kind == TaskKind::smnist ? 256 : vocab; }

    void validate() const {
        switch (kind) {
            case TaskKind::induction_head:
                if (vocab < 3 || length < 4) throw ConfigError("task: induction_head needs vocab >= 3, length >= 4");
                break;
            case TaskKind::extended_induction_head:
                if (trigger_length < 1 || length < 2 * trigger_length + 2)
                    throw ConfigError("task: extended_induction_head needs length >= 2*trigger_length + 2");
                break;
            case TaskKind::smnist:
                if (mnist_images.empty() || mnist_labels.empty())
                    throw ConfigError("task: smnist needs mnist_images and mnist_labels paths");
                break;
            case TaskKind::selective_copying:
                throw ConfigError("task: selective_copying is a demo, not a training task");
        }
    }
};

struct TrainConfig {
    double lr = 3e-3;
    std::size_t batch = 64;
    std::size_t steps = 3000;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0;
    bool cosine_decay = false;  // anneal lr to 0 over `steps`
    std::vector<std::size_t> eval_lengths{16, 32, 64, 128, 256, 512, 1024};
    std::size_t eval_every = 500;   // 0: only after the last step
    std::size_t eval_samples = 500;
    ApplyMode mode = ApplyMode::fft;
    std::size_t pad = 2;

    AdamConfig adam() const { return {lr, beta1, beta2, eps, clip_norm}; }

    void validate() const {
        if (!(lr > 0.0) || batch == 0 || eval_samples == 0 || pad < 2)
            throw ConfigError("train: lr, batch, eval_samples must be positive and pad >= 2");
        if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0))
            throw ConfigError("train: invalid optimizer moments");
    }
};

/// Task plus any loaded data set.
struct TaskData {
    TaskSpec spec;
    std::optional<SequenceBatch> train_set;
    std::optional<SequenceBatch> test_set;
};

inline TaskData load_task(const TaskSpec& spec) {
    spec.validate();
    TaskData data{spec, std::nullopt, std::nullopt};
    if (spec.kind == TaskKind::smnist) {
        const SequenceBatch all = load_mnist_idx(spec.mnist_images, spec.mnist_labels);
        if (spec.train_count + spec.test_count > all.batch)
            throw ConfigError("task: train_count + test_count exceeds images in file");
        data.train_set = slice(all, 0, spec.train_count);
        data.test_set = slice(all, spec.train_count, spec.test_count);
    }
    return data;
}

/// Seed space for held-out evaluation, disjoint from training streams.
inline std::uint64_t eval_seed(const TaskSpec& spec, std::size_t length) {
    return derive_seed(spec.seed ^ 0x5eed5eed5eed5eedULL, length);
}

/// Draws `count` samples at `length` (synthetic tasks) or from the named
/// split (sMNIST, length ignored).
inline SequenceBatch sample_batch(const TaskData& data, std::size_t length, std::size_t count,
                                  std::uint64_t seed, bool train_split) {
    const TaskSpec& s = data.spec;
    switch (s.kind) {
        case TaskKind::induction_head:
            return gen_induction_head(s.vocab, length, count, seed, train_split && s.random_middle);
        case TaskKind::extended_induction_head:
            return gen_extended_ih(s.vocab, length, s.trigger_length, count, seed, train_split && s.random_middle);
        case TaskKind::smnist: {
            const SequenceBatch& set = train_split ? *data.train_set : *data.test_set;
            std::mt19937_64 rng(seed);
            std::uniform_int_distribution<std::size_t> pick(0, set.batch - 1);
            std::vector<std::size_t> idx(count);
            for (auto& i : idx) i = pick(rng);
            return gather(set, idx);
        }
        case TaskKind::selective_copying: break;
    }
    throw ConfigError("sample_batch: unsupported task");
}

/// Exact-match accuracy of the recalled token at each length; sMNIST uses
/// the first `samples` test images.
inline std::vector<double> evaluate(const Model& model, const TaskData& data,
                                    const std::vector<std::size_t>& lengths, std::size_t samples) {
    std::vector<double> acc;
    if (data.spec.kind == TaskKind::smnist) {
        const SequenceBatch test = slice(*data.test_set, 0, std::min(samples, data.test_set->batch));
        acc.push_back(accuracy(predict(model, test, 100), test.targets));
        return acc;
    }
    for (auto len : lengths) {
        const SequenceBatch b = sample_batch(data, len, samples, eval_seed(data.spec, len), false);
        acc.push_back(accuracy(predict(model, b, len >= 256 ? 64 : 256), b.targets));
    }
    return acc;
}

struct MetricRow {
    std::size_t step = 0;
    double loss = 0.0;
    std::vector<double> accuracy;  // one per evaluation length
};

struct TrainResult {
    Model model;  // final parameters, or the last finite ones on divergence
    std::vector<MetricRow> history;
    bool diverged = false;
    std::string divergence;
    std::size_t steps_done = 0;
};

using StepCallback = std::function<void(std::size_t step, double loss)>;

/// Adam on freshly drawn batches. Evaluates at step 0, every `eval_every`
/// steps and after the last step.
inline TrainResult train(Model model, const TaskData& data, const TrainConfig& cfg,
                         const StepCallback& on_step = {}) {
    cfg.validate();
    const auto eval_lengths =
        data.spec.kind == TaskKind::smnist ? std::vector<std::size_t>{data.spec.length} : cfg.eval_lengths;
    TrainResult res{model, {}, false, {}, 0};
    ad::ParamList params = parameters(model);
    AdamState state;
    AdamConfig adam = cfg.adam();
    const GradOptions gopt{cfg.mode, cfg.pad};
    double last_loss = std::nan("");
    auto log_eval = [&](std::size_t step, double loss) {
        res.history.push_back({step, loss, evaluate(res.model, data, eval_lengths, cfg.eval_samples)});
    };
    log_eval(0, last_loss);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const SequenceBatch batch =
            sample_batch(data, data.spec.length, cfg.batch, derive_seed(cfg.seed, step), true);
        LossGrad lg;
        try {
            lg = loss_and_grad(res.model, batch, gopt);
        } catch (const NonFiniteError& e) {
            res.diverged = true;
            res.divergence = "step " + std::to_string(step) + ": " + e.what();
            break;
        }
        if (cfg.cosine_decay)
            adam.lr = 0.5 * cfg.lr * (1.0 + std::cos(M_PI * static_cast<double>(step - 1) / static_cast<double>(cfg.steps)));
        ad::ParamList next = params;
        optimizer_step(next, lg.grads, state, adam);
        bool ok = true;
        for (const auto& p : next)
            if (!detail::finite(p.tensor)) ok = false;
        if (!ok) {
            res.diverged = true;
            res.divergence = "step " + std::to_string(step) + ": parameters became non-finite";
            break;
        }
        params = std::move(next);
        set_parameters(res.model, params);
        last_loss = lg.loss;
        res.steps_done = step;
        if (on_step) on_step(step, lg.loss);
        if ((cfg.eval_every && step % cfg.eval_every == 0) || step == cfg.steps) log_eval(step, lg.loss);
    }
    if (res.diverged) log_eval(res.steps_done, last_loss);
    return res;
}

}  // namespace gssm
