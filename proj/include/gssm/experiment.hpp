#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gssm/errors.hpp"
#include "gssm/model.hpp"
#include "gssm/selectivity.hpp"
#include "gssm/train.hpp"

namespace gssm {

using json = nlohmann::json;

/// Relative output paths are resolved under this directory when it is set.
inline constexpr const char* kOutputRootEnv = "GSSM_OUTPUT_ROOT";
inline constexpr int kCheckpointVersion = 1;

struct ExperimentConfig {
    std::string model = "geometric_ssm";  // or "selective_ssm"
    GeometricConfig geometric;
    MambaConfig selective;
    TaskSpec task;
    TrainConfig train;
    std::string output_dir = "runs/default";
};

namespace detail {

/// Object reader that rejects unknown keys and names the offending key path.
class KeyReader {
public:
    KeyReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError("key '" + where() + "': expected an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        used_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
                if (!it->is_number_unsigned()) throw ConfigError("expected a non-negative integer");
            } else if constexpr (std::is_same_v<T, double>) {
                if (!it->is_number()) throw ConfigError("expected a number");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError("expected true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) throw ConfigError("expected a string");
            }
            out = it->template get<T>();
        } catch (const std::exception& e) {
            throw ConfigError("key '" + where(key) + "': " + e.what());
        }
    }

    template <class E, class Parse>
    void read_enum(const char* key, E& out, Parse parse) {
        std::string s;
        read(key, s);
        if (s.empty()) return;
        try {
            out = parse(s);
        } catch (const Error& e) {
            throw ConfigError("key '" + where(key) + "': " + e.what());
        }
    }

    const json* child(const char* key) {
        used_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    std::string where(const std::string& key = {}) const {
        if (key.empty()) return path_;
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!used_.count(k)) throw ConfigError("key '" + where(k) + "': unknown key");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> used_;
};

inline std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::string& path, const std::string& text) {
    const std::filesystem::path p(path);
    std::error_code ec;
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path(), ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << text) || !out.flush()) throw IoError("cannot write '" + path + "'");
}

/// Parses JSON text, reporting syntax errors by line and column.
template <class Err = FormatError>
inline json parse_json(const std::string& text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t at = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
        const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(at), '\n'));
        const std::size_t nl = text.rfind('\n', at ? at - 1 : 0);
        const std::size_t col = nl == std::string::npos || at == 0 ? at + 1 : at - nl;
        throw Err(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON");
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Config file form

inline json task_to_json(const TaskSpec& t) {
    json j{{"kind", to_string(t.kind)}, {"seed", t.seed}};
    if (t.kind == TaskKind::smnist) {
        j["mnist_images"] = t.mnist_images;
        j["mnist_labels"] = t.mnist_labels;
        j["train_count"] = t.train_count;
        j["test_count"] = t.test_count;
        j["length"] = t.length;
    } else {
        j["vocab"] = t.vocab;
        j["length"] = t.length;
        j["random_middle"] = t.random_middle;
        if (t.kind == TaskKind::extended_induction_head) j["trigger_length"] = t.trigger_length;
    }
    return j;
}

inline TaskSpec task_from_json(const json& j, const std::string& path) {
    TaskSpec t;
    detail::KeyReader r(j, path);
    r.read_enum("kind", t.kind, task_kind_from_string);
    r.read("seed", t.seed);
    r.read("vocab", t.vocab);
    r.read("length", t.length);
    r.read("trigger_length", t.trigger_length);
    r.read("random_middle", t.random_middle);
    r.read("mnist_images", t.mnist_images);
    r.read("mnist_labels", t.mnist_labels);
    r.read("train_count", t.train_count);
    r.read("test_count", t.test_count);
    r.finish();
    if (t.kind == TaskKind::smnist && !j.contains("length")) t.length = 784;
    return t;
}

inline json train_to_json(const TrainConfig& c) {
    return json{{"lr", c.lr},
                {"batch", c.batch},
                {"steps", c.steps},
                {"seed", c.seed},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"eps", c.eps},
                {"clip_norm", c.clip_norm},
                {"cosine_decay", c.cosine_decay},
                {"eval_lengths", c.eval_lengths},
                {"eval_every", c.eval_every},
                {"eval_samples", c.eval_samples},
                {"mode", to_string(c.mode)},
                {"pad", c.pad}};
}

inline TrainConfig train_from_json(const json& j, const std::string& path) {
    TrainConfig c;
    detail::KeyReader r(j, path);
    r.read("lr", c.lr);
    r.read("batch", c.batch);
    r.read("steps", c.steps);
    r.read("seed", c.seed);
    r.read("beta1", c.beta1);
    r.read("beta2", c.beta2);
    r.read("eps", c.eps);
    r.read("clip_norm", c.clip_norm);
    r.read("cosine_decay", c.cosine_decay);
    if (const json* lens = r.child("eval_lengths")) {
        if (!lens->is_array()) throw ConfigError("key '" + r.where("eval_lengths") + "': expected an array");
        c.eval_lengths.clear();
        for (const auto& v : *lens) {
            if (!v.is_number_unsigned() || v.get<std::size_t>() == 0)
                throw ConfigError("key '" + r.where("eval_lengths") + "': expected positive integers");
            c.eval_lengths.push_back(v.get<std::size_t>());
        }
    }
    r.read("eval_every", c.eval_every);
    r.read("eval_samples", c.eval_samples);
    r.read_enum("mode", c.mode, apply_mode_from_string);
    r.read("pad", c.pad);
    r.finish();
    return c;
}

inline json config_to_json(const ExperimentConfig& c) {
    json model;
    if (c.model == "geometric_ssm") {
        model = json{{"kind", c.model},
                     {"m", c.geometric.m},
                     {"nu_f", c.geometric.nu_f},
                     {"nu_m", c.geometric.nu_m},
                     {"nu_r", c.geometric.nu_r},
                     {"pooling", to_string(c.geometric.pooling)}};
    } else {
        model = json{{"kind", c.model},
                     {"m", c.selective.m},
                     {"n", c.selective.n},
                     {"pooling", to_string(c.selective.pooling)}};
    }
    return json{{"model", model},
                {"task", task_to_json(c.task)},
                {"train", train_to_json(c.train)},
                {"output_dir", c.output_dir}};
}

/// Builds a config from its JSON form; vocabulary and class counts of the
/// model follow the task.
inline ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    detail::KeyReader r(j, "");
    r.read("output_dir", c.output_dir);
    if (const json* t = r.child("task")) c.task = task_from_json(*t, "task");
    if (const json* t = r.child("train")) c.train = train_from_json(*t, "train");
    if (const json* m = r.child("model")) {
        detail::KeyReader mr(*m, "model");
        mr.read("kind", c.model);
        if (c.model == "geometric_ssm") {
            mr.read("m", c.geometric.m);
            mr.read("nu_f", c.geometric.nu_f);
            mr.read("nu_m", c.geometric.nu_m);
            mr.read("nu_r", c.geometric.nu_r);
            mr.read_enum("pooling", c.geometric.pooling, pooling_from_string);
        } else if (c.model == "selective_ssm") {
            mr.read("m", c.selective.m);
            mr.read("n", c.selective.n);
            mr.read_enum("pooling", c.selective.pooling, pooling_from_string);
        } else {
            throw ConfigError("key 'model.kind': expected geometric_ssm or selective_ssm, got '" + c.model + "'");
        }
        mr.finish();
    }
    r.finish();
    if (c.task.kind == TaskKind::smnist && !j.contains("model")) c.geometric.pooling = Pooling::mean;
    c.geometric.vocab = c.selective.vocab = c.task.input_vocab();
    c.geometric.classes = c.selective.classes = c.task.classes();
    c.task.validate();
    c.train.validate();
    if (c.model == "geometric_ssm") c.geometric.validate();
    else c.selective.validate();
    if (c.output_dir.empty()) throw ConfigError("key 'output_dir': must not be empty");
    return c;
}

inline ExperimentConfig load_config(const std::string& path) {
    const json j = detail::parse_json<ConfigError>(detail::read_text(path), path);
    try {
        return config_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

inline std::string dump_config(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

/// output_dir, placed under $GSSM_OUTPUT_ROOT when that is set and the path
/// is relative.
inline std::filesystem::path resolve_output_dir(const std::string& dir) {
    const std::filesystem::path p(dir);
    const char* root = std::getenv(kOutputRootEnv);
    if (root && *root && p.is_relative()) return std::filesystem::path(root) / p;
    return p;
}

inline Model make_model(const ExperimentConfig& c) {
    if (c.model == "geometric_ssm") return GeometricModel{c.geometric, init_geometric(c.geometric, c.train.seed)};
    return MambaModel{c.selective, init_mamba(c.selective, c.train.seed)};
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
    int version = kCheckpointVersion;
    std::string kind;
    ad::ParamList params;
    json config;  // config_to_json snapshot
    std::size_t step = 0;
};

inline std::string serialize_checkpoint(const Checkpoint& c) {
    json params = json::array();
    for (const auto& p : c.params) {
        for (double v : p.tensor.data)
            if (!std::isfinite(v)) throw FormatError("checkpoint: parameter '" + p.name + "' is not finite");
        params.push_back(json{{"name", p.name}, {"shape", p.tensor.shape}, {"values", p.tensor.data}});
    }
    const json j{{"format", "gssm-checkpoint"},
                 {"version", c.version},
                 {"kind", c.kind},
                 {"step", c.step},
                 {"config", c.config},
                 {"parameters", params}};
    return j.dump(1) + "\n";
}

inline Checkpoint parse_checkpoint(const std::string& text, const std::string& source = "checkpoint") {
    const json j = detail::parse_json(text, source);
    auto fail = [&](const std::string& msg) { return FormatError(source + ": " + msg); };
    if (!j.is_object() || j.value("format", "") != "gssm-checkpoint") throw fail("not a gssm checkpoint");
    if (!j.contains("version") || !j["version"].is_number_integer()) throw fail("missing format version");
    const int version = j["version"].get<int>();
    if (version != kCheckpointVersion)
        throw fail("unsupported format version " + std::to_string(version) + " (expected " +
                   std::to_string(kCheckpointVersion) + ")");
    Checkpoint c;
    c.version = version;
    try {
        c.kind = j.at("kind").get<std::string>();
        c.step = j.at("step").get<std::size_t>();
        c.config = j.at("config");
        for (const auto& p : j.at("parameters")) {
            ad::Tensor t(p.at("shape").get<std::vector<std::size_t>>(), p.at("values").get<std::vector<double>>());
            c.params.push_back({p.at("name").get<std::string>(), std::move(t)});
        }
    } catch (const json::exception& e) {
        throw fail(std::string("malformed field: ") + e.what());
    } catch (const DimensionError& e) {
        throw fail(e.what());
    }
    return c;
}

inline Checkpoint make_checkpoint(const Model& model, const ExperimentConfig& cfg, std::size_t step) {
    return Checkpoint{kCheckpointVersion, model_kind(model), parameters(model), config_to_json(cfg), step};
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
    detail::write_text(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
    return parse_checkpoint(detail::read_text(path), path);
}

/// Rebuilds the model and its config from a checkpoint.
inline std::pair<Model, ExperimentConfig> restore(const Checkpoint& c) {
    ExperimentConfig cfg = config_from_json(c.config);
    if (cfg.model != c.kind) throw FormatError("checkpoint: kind '" + c.kind + "' does not match its config");
    Model model = make_model(cfg);
    try {
        set_parameters(model, c.params);
    } catch (const Error& e) {
        throw FormatError(std::string("checkpoint: ") + e.what());
    }
    return {std::move(model), std::move(cfg)};
}

// ---------------------------------------------------------------------------
// CSV

inline std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

/// Comment lines carrying the resolved config and seed of a results file.
inline std::string provenance_header(const std::string& command, const ExperimentConfig& cfg) {
    return "# gssm " + command + "\n# seed " + std::to_string(cfg.train.seed) + "\n# config " +
           config_to_json(cfg).dump() + "\n";
}

inline std::string join_lengths(const std::vector<std::size_t>& lengths) {
    std::string s;
    for (std::size_t i = 0; i < lengths.size(); ++i) s += (i ? "," : "") + std::to_string(lengths[i]);
    return s;
}

inline std::string metrics_csv(const ExperimentConfig& cfg, const std::vector<std::size_t>& lengths,
                               const std::vector<MetricRow>& history) {
    std::string out = provenance_header("train", cfg) + "step,loss," + join_lengths(lengths) + "\n";
    for (const auto& row : history) {
        out += std::to_string(row.step) + "," + (std::isnan(row.loss) ? "" : fmt6(row.loss));
        for (double a : row.accuracy) out += "," + fmt6(a);
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

struct TrainRun {
    TrainResult result;
    std::filesystem::path checkpoint;
    std::filesystem::path metrics;
    std::filesystem::path losses;
};

/// Trains per `cfg` and writes checkpoint.json, metrics.csv (evaluation rows)
/// and loss.csv (every step). On divergence the files hold the last finite
/// parameters and NonFiniteError is raised afterwards.
inline TrainRun run_training(const ExperimentConfig& cfg, const StepCallback& on_step = {}) {
    const TaskData data = load_task(cfg.task);
    std::vector<std::pair<std::size_t, double>> losses;
    TrainRun run{train(make_model(cfg), data, cfg.train,
                       [&](std::size_t s, double l) {
                           losses.emplace_back(s, l);
                           if (on_step) on_step(s, l);
                       }),
                 {}, {}, {}};
    const auto dir = resolve_output_dir(cfg.output_dir);
    run.checkpoint = dir / "checkpoint.json";
    run.metrics = dir / "metrics.csv";
    run.losses = dir / "loss.csv";
    const auto lengths =
        cfg.task.kind == TaskKind::smnist ? std::vector<std::size_t>{cfg.task.length} : cfg.train.eval_lengths;
    save_checkpoint(run.checkpoint.string(), make_checkpoint(run.result.model, cfg, run.result.steps_done));
    detail::write_text(run.metrics.string(), metrics_csv(cfg, lengths, run.result.history));
    std::string loss_text = provenance_header("train", cfg) + "step,loss\n";
    for (const auto& [s, l] : losses) loss_text += std::to_string(s) + "," + fmt6(l) + "\n";
    detail::write_text(run.losses.string(), loss_text);
    if (run.result.diverged)
        throw NonFiniteError("training", run.result.divergence + " (last finite parameters saved to " +
                                             run.checkpoint.string() + ")");
    return run;
}

inline TrainRun cmd_train(const std::string& config_path, const StepCallback& on_step = {}) {
    return run_training(load_config(config_path), on_step);
}

struct EvalTable {
    std::string model;
    std::vector<std::size_t> lengths;
    std::vector<double> accuracy;
    std::string csv;
};

/// Accuracy of a checkpoint at each length over `samples` fresh samples.
inline EvalTable cmd_eval(const std::string& checkpoint_path, const std::vector<std::size_t>& lengths,
                          std::size_t samples = 2000) {
    if (lengths.empty()) throw ConfigError("eval: empty length list");
    if (samples == 0) throw ConfigError("eval: samples must be positive");
    auto [model, cfg] = restore(load_checkpoint(checkpoint_path));
    if (model_vocab(model) != cfg.task.input_vocab() || model_classes(model) != cfg.task.classes())
        throw DimensionError("eval: model does not match the task it was trained on");
    if (cfg.task.kind == TaskKind::smnist)
        for (auto l : lengths)
            if (l != 784) throw ConfigError("eval: smnist sequences have fixed length 784");
    const TaskData data = load_task(cfg.task);
    EvalTable t{model_kind(model), lengths, evaluate(model, data, lengths, samples), {}};
    t.csv = provenance_header("eval " + checkpoint_path, cfg) + "# samples " + std::to_string(samples) +
            "\n# model " + t.model + "\n" + join_lengths(lengths) + "\n";
    for (std::size_t i = 0; i < t.accuracy.size(); ++i) t.csv += (i ? "," : "") + fmt6(t.accuracy[i]);
    t.csv += "\n";
    return t;
}

inline std::vector<std::size_t> parse_lengths(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used == 0 || used != item.size() || v == 0)
            throw ConfigError("lengths: '" + item + "' is not a positive integer");
        out.push_back(static_cast<std::size_t>(v));
    }
    if (out.empty()) throw ConfigError("lengths: empty list");
    return out;
}

// Scaling benchmark ---------------------------------------------------------

struct BenchSpec {
    std::vector<std::size_t> lengths{256, 512, 1024, 2048, 4096};
    std::vector<std::size_t> orders{4, 16, 64};
    std::vector<std::size_t> states{16, 32, 64, 128};
    std::size_t m = 2;
    std::size_t batch = 4;
    std::size_t order_length = 1024;  // l for the q sweep
    std::size_t state_length = 256;   // l for the baseline n sweep
    std::size_t repeats = 3;
    std::uint64_t seed = 0;
};

inline BenchSpec bench_from_json(const json& j) {
    BenchSpec b;
    detail::KeyReader r(j, "");
    auto list = [&](const char* key, std::vector<std::size_t>& out) {
        if (const json* v = r.child(key)) {
            if (!v->is_array() || v->empty()) throw ConfigError(std::string("key '") + key + "': expected a non-empty array");
            out = v->get<std::vector<std::size_t>>();
        }
    };
    list("lengths", b.lengths);
    list("orders", b.orders);
    list("states", b.states);
    r.read("m", b.m);
    r.read("batch", b.batch);
    r.read("order_length", b.order_length);
    r.read("state_length", b.state_length);
    r.read("repeats", b.repeats);
    r.read("seed", b.seed);
    r.finish();
    if (b.m == 0 || b.batch == 0 || b.repeats == 0) throw ConfigError("bench: m, batch and repeats must be positive");
    return b;
}

struct BenchRow {
    std::string sweep;  // "length", "order" or "state"
    std::size_t value = 0;
    double seconds = 0.0;
    std::size_t retained = 0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
    double length_slope = 0.0;    // log time vs log l, geometric fft mode
    double retained_spread = 0.0; // (max - min) / min over the q sweep
    double state_slope = 0.0;     // log time vs log n, selective baseline
    std::string csv;
};

/// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ContractError("loglog_slope: need >= 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += std::log(x[i]), my += std::log(y[i]);
    mx /= static_cast<double>(x.size());
    my /= static_cast<double>(x.size());
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = std::log(x[i]) - mx;
        num += dx * (std::log(y[i]) - my);
        den += dx * dx;
    }
    return num / den;
}

namespace detail {

/// Median wall time of one loss_and_grad call.
inline std::pair<double, std::size_t> time_step(const Model& model, const SequenceBatch& batch, std::size_t repeats) {
    std::vector<double> t;
    std::size_t retained = loss_and_grad(model, batch).retained_elements;  // warm-up and plan creation
    for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        retained = loss_and_grad(model, batch).retained_elements;
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
    return {t[t.size() / 2], retained};
}

}  // namespace detail

inline BenchReport run_bench(const BenchSpec& spec) {
    BenchReport rep;
    const std::size_t vocab = 8;
    auto tokens = [&](std::size_t L) { return gen_induction_head(vocab, L, spec.batch, spec.seed); };
    std::vector<double> xs, ys;
    for (auto L : spec.lengths) {
        GeometricConfig gc{spec.m, 2, 2, 4, vocab, vocab, Pooling::last};
        const Model model = GeometricModel{gc, init_geometric(gc, spec.seed)};
        const auto [sec, kept] = detail::time_step(model, tokens(L), spec.repeats);
        rep.rows.push_back({"length", L, sec, kept});
        xs.push_back(static_cast<double>(L));
        ys.push_back(sec);
    }
    rep.length_slope = loglog_slope(xs, ys);
    std::size_t lo = static_cast<std::size_t>(-1), hi = 0;
    for (auto q : spec.orders) {
        GeometricConfig gc{spec.m, q / 2, q - q / 2, q, vocab, vocab, Pooling::last};
        const Model model = GeometricModel{gc, init_geometric(gc, spec.seed)};
        const auto [sec, kept] = detail::time_step(model, tokens(spec.order_length), 1);
        rep.rows.push_back({"order", q, sec, kept});
        lo = std::min(lo, kept);
        hi = std::max(hi, kept);
    }
    rep.retained_spread = static_cast<double>(hi - lo) / static_cast<double>(lo);
    xs.clear();
    ys.clear();
    for (auto n : spec.states) {
        MambaConfig mc{16, n, vocab, vocab, Pooling::last};
        const Model model = MambaModel{mc, init_mamba(mc, spec.seed)};
        const auto [sec, kept] = detail::time_step(model, tokens(spec.state_length), spec.repeats);
        rep.rows.push_back({"state", n, sec, kept});
        xs.push_back(static_cast<double>(n));
        ys.push_back(sec);
    }
    rep.state_slope = loglog_slope(xs, ys);
    rep.csv = "# gssm bench\n# length_slope " + fmt6(rep.length_slope) + "\n# retained_spread " +
              fmt6(rep.retained_spread) + "\n# state_slope " + fmt6(rep.state_slope) + "\nsweep,value,seconds,retained\n";
    for (const auto& r : rep.rows)
        rep.csv += r.sweep + "," + std::to_string(r.value) + "," + fmt6(r.seconds) + "," + std::to_string(r.retained) + "\n";
    return rep;
}

/// `bench <spec>`: spec is a JSON BenchSpec (empty object for defaults).
inline BenchReport cmd_bench(const std::string& spec_path) {
    const std::string text = detail::read_text(spec_path);
    try {
        return run_bench(bench_from_json(detail::parse_json<ConfigError>(text, spec_path)));
    } catch (const ConfigError& e) {
        throw ConfigError(spec_path + ": " + e.what());
    }
}

// Selective-copying demo ----------------------------------------------------

struct DemoSummary {
    std::vector<SelectiveTraceRow> rows;  // first sequence
    double blank_deviation = 0.0;         // max |y - 0| after blank inputs
    double data_deviation = 0.0;          // max |y - response| after data inputs
    std::size_t sequences = 0;
    std::string csv;
};

/// Runs the printed (or the constructed) selective system over `sequences`
/// seeded sequences and reports the worst deviation from {0, 0.5}.
inline DemoSummary cmd_demo_selective(const std::string& out_path, bool designed = false, std::size_t length = 64,
                                      std::size_t sequences = 1000, std::uint64_t seed = 0) {
    if (sequences == 0) throw ContractError("demo-selective: sequences must be >= 1");
    const auto emb = TokenPairEmbedding::reference();
    const double response = 0.5;
    const StateSpaceSystem sys = designed ? design_selective_system(emb, response, 0.05, 0.0) : paper_example_system();
    DemoSummary s;
    s.sequences = sequences;
    for (std::size_t k = 0; k < sequences; ++k) {
        const auto rows = run_selective_trace(sys, emb, gen_selective_copying(length, seed + k));
        for (const auto& r : rows) {
            if (r.label) s.data_deviation = std::max(s.data_deviation, std::abs(r.output - response));
            else s.blank_deviation = std::max(s.blank_deviation, std::abs(r.output));
        }
        if (k == 0) s.rows = rows;
    }
    s.csv = "# gssm demo-selective\n# system " + std::string(designed ? "designed" : "printed") + "\n# seed " +
            std::to_string(seed) + "\n# sequences " + std::to_string(sequences) + "\n# blank_deviation " +
            fmt6(s.blank_deviation) + "\n# data_deviation " + fmt6(s.data_deviation) + "\nt,label,output\n";
    for (std::size_t t = 0; t < s.rows.size(); ++t)
        s.csv += std::to_string(t) + "," + std::to_string(s.rows[t].label) + "," + fmt6(s.rows[t].output) + "\n";
    if (!out_path.empty()) detail::write_text(resolve_output_dir(out_path).string(), s.csv);
    return s;
}

// Data generation -----------------------------------------------------------

struct GenDataSpec {
    TaskSpec task;
    std::size_t length = 16;
    std::size_t count = 16;
    std::uint64_t seed = 0;
    std::string output;
};

struct GenDataResult {
    std::string text;
    std::filesystem::path output;  // empty when the spec names no file
};

/// `gen-data <spec>`: writes `count` samples of the task as text lines.
inline GenDataResult cmd_gen_data(const std::string& spec_path) {
    const json j = detail::parse_json<ConfigError>(detail::read_text(spec_path), spec_path);
    GenDataSpec g;
    try {
        detail::KeyReader r(j, "");
        if (const json* t = r.child("task")) g.task = task_from_json(*t, "task");
        r.read("length", g.length);
        r.read("count", g.count);
        r.read("seed", g.seed);
        r.read("output", g.output);
        r.finish();
        g.task.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(spec_path + ": " + e.what());
    }
    if (g.count == 0) throw ConfigError(spec_path + ": key 'count': must be positive");
    const TaskData data = load_task(g.task);
    const SequenceBatch b = sample_batch(data, g.length, g.count, g.seed, false);
    const std::string text = "# gssm gen-data " + task_to_json(g.task).dump() + " length " + std::to_string(g.length) +
                             " seed " + std::to_string(g.seed) + "\n" + format_batch_text(b);
    GenDataResult res{text, {}};
    if (!g.output.empty()) {
        res.output = resolve_output_dir(g.output);
        detail::write_text(res.output.string(), text);
    }
    return res;
}

}  // namespace gssm
