// Command-line front end: train, eval, bench, demo-selective, gen-data.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "gssm/experiment.hpp"

namespace {

int fail(const std::string& category, const std::string& msg) {
    std::string line = msg;
    for (char& c : line)
        if (c == '\n') c = ' ';
    std::cerr << "error: " << category << ": " << line << "\n";
    return 1;
}

void write_or_print(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        const auto p = gssm::resolve_output_dir(path);
        gssm::detail::write_text(p.string(), text);
        std::cout << "wrote " << p.string() << "\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Geometric and selective state-space sequence models"};
    app.require_subcommand(1);

    std::string config_path;
    bool quiet = false;
    auto* train = app.add_subcommand("train", "Train a model from a JSON config");
    train->add_option("config", config_path, "Experiment config file")->required();
    train->add_flag("-q,--quiet", quiet, "Only print the final summary");

    std::string ckpt_path, lengths = "16,32,64,128,256,512,1024", eval_out;
    std::size_t samples = 2000;
    auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint at several lengths");
    eval->add_option("checkpoint", ckpt_path, "Checkpoint file")->required();
    eval->add_option("--lengths", lengths, "Comma-separated sequence lengths");
    eval->add_option("--samples", samples, "Fresh samples per length")->check(CLI::PositiveNumber);
    eval->add_option("-o,--out", eval_out, "CSV output path (default: stdout)");

    std::string bench_spec, bench_out;
    auto* bench = app.add_subcommand("bench", "Scaling benchmark from a JSON spec");
    bench->add_option("spec", bench_spec, "Benchmark spec file")->required();
    bench->add_option("-o,--out", bench_out, "CSV output path (default: stdout)");

    std::string demo_out, system = "printed";
    std::size_t demo_len = 64, demo_seqs = 1000;
    std::uint64_t demo_seed = 0;
    auto* demo = app.add_subcommand("demo-selective", "Blank/data filtering with an LTI system");
    demo->add_option("out", demo_out, "CSV output path")->required();
    demo->add_option("--system", system, "printed or designed")->check(CLI::IsMember({"printed", "designed"}));
    demo->add_option("--length", demo_len, "Sequence length")->check(CLI::Range(2, 1 << 20));
    demo->add_option("--sequences", demo_seqs, "Number of seeded sequences")->check(CLI::PositiveNumber);
    demo->add_option("--seed", demo_seed, "First seed");

    std::string gen_spec;
    auto* gen = app.add_subcommand("gen-data", "Write task samples as text");
    gen->add_option("spec", gen_spec, "Generation spec file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return fail("usage", e.what());
    }

    try {
        if (*train) {
            const auto cfg = gssm::load_config(config_path);
            std::cout << "model " << cfg.model << ", task " << gssm::to_string(cfg.task.kind) << ", "
                      << cfg.train.steps << " steps\n";
            const std::size_t every = std::max<std::size_t>(1, cfg.train.steps / 20);
            const auto run = gssm::run_training(cfg, [&](std::size_t step, double loss) {
                if (!quiet && (step % every == 0 || step == 1)) std::printf("step %zu loss %.6g\n", step, loss);
            });
            const auto& last = run.result.history.back();
            std::cout << "final accuracy:";
            for (double a : last.accuracy) std::cout << " " << gssm::fmt6(a);
            std::cout << "\nwrote " << run.checkpoint.string() << "\nwrote " << run.metrics.string() << "\n";
        } else if (*eval) {
            const auto t = gssm::cmd_eval(ckpt_path, gssm::parse_lengths(lengths), samples);
            write_or_print(eval_out, t.csv);
        } else if (*bench) {
            const auto rep = gssm::cmd_bench(bench_spec);
            write_or_print(bench_out, rep.csv);
        } else if (*demo) {
            const auto s = gssm::cmd_demo_selective(demo_out, system == "designed", demo_len, demo_seqs, demo_seed);
            std::cout << "system " << system << ": max |y| after blank " << gssm::fmt6(s.blank_deviation)
                      << ", max |y-0.5| after data " << gssm::fmt6(s.data_deviation) << " over " << s.sequences
                      << " sequences\nwrote " << gssm::resolve_output_dir(demo_out).string() << "\n";
        } else if (*gen) {
            const auto res = gssm::cmd_gen_data(gen_spec);
            if (res.output.empty()) std::cout << res.text;
            else std::cout << "wrote " << res.output.string() << "\n";
        }
    } catch (const gssm::Error& e) {
        return fail(e.category(), e.what());
    } catch (const std::exception& e) {
        return fail("internal", e.what());
    }
    return 0;
}
