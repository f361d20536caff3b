// cogformer: train, probe, diagnose, bench, and export-attn over JSON
// configs. Exit codes: 0 success, 2 usage/config error, 3 numerical failure.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "cog/checkpoint.hpp"
#include "cog/config_json.hpp"
#include "cog/errors.hpp"
#include "cog/model.hpp"
#include "cog/probes.hpp"
#include "cog/trainer.hpp"

namespace fs = std::filesystem;

namespace {

/// Loads the config JSON (or an empty object) and applies --set overrides.
nlohmann::json load_config_tree(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
    nlohmann::json tree = nlohmann::json::object();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw cog::config_error("cannot open config: " + config_path);
        tree = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (tree.is_discarded())
            throw cog::config_error("config is not valid JSON: " + config_path);
    }
    for (const auto& s : overrides) cog::apply_override(tree, s);
    return tree;
}

/// Every command records the fully resolved inputs it ran with.
void write_effective_config(const fs::path& out_dir, const nlohmann::json& effective) {
    fs::create_directories(out_dir);
    std::ofstream out(out_dir / "effective_config.json");
    if (!out)
        throw cog::config_error("cannot write effective config in " + out_dir.string());
    out << effective.dump(2) << '\n';
}

template <typename F>
int with_precision(cog::Precision p, F&& f) {
    if (p == cog::Precision::Single) return f(float{});
    return f(double{});
}

std::string read_text_arg(const std::string& text, const std::string& text_file,
                          const char* command) {
    if (!text.empty() && !text_file.empty())
        throw cog::config_error(std::string(command) + ": pass --text or --text-file, not both");
    if (!text.empty()) return text;
    if (text_file.empty())
        throw cog::config_error(std::string(command) + ": one of --text or --text-file is required");
    std::ifstream in(text_file, std::ios::binary);
    if (!in) throw cog::config_error("cannot open text file: " + text_file);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_json_report(const fs::path& file, const nlohmann::json& j) {
    std::ofstream out(file);
    if (!out) throw cog::config_error("cannot write report: " + file.string());
    out << j.dump(2) << '\n';
    std::cout << "wrote " << file.string() << "\n";
}

struct TrainArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string resume;
};

int cmd_train(const TrainArgs& args) {
    const nlohmann::json tree = load_config_tree(args.config_path, args.overrides);
    cog::RunConfig rc = cog::run_config_from_json(tree);
    if (rc.paths.corpus.empty())
        throw cog::config_error("train: no corpus configured (set paths.corpus)");
    if (!fs::exists(rc.paths.corpus))
        throw cog::config_error("train: corpus file does not exist: " + rc.paths.corpus);
    const fs::path out_dir = rc.paths.out_dir;

    if (args.resume.empty()) {
        write_effective_config(out_dir, cog::to_json(rc));
        return with_precision(rc.model.precision, [&](auto tag) {
            using S = decltype(tag);
            auto model = cog::init_params<S>(rc.model);
            auto optim = cog::OptimState<S>::zero_like(model);
            const auto trace = cog::train(model, optim, 0, rc.paths.corpus, rc.train, out_dir);
            if (!trace.empty())
                std::cout << "trained " << rc.train.total_steps << " steps; loss "
                          << trace.front().loss << " -> " << trace.back().loss << "\n";
            std::cout << "artifacts in " << out_dir.string() << "\n";
            return 0;
        });
    }

    // Resume continues with the checkpoint's own model/train configs; the
    // config file contributes only paths.
    const cog::CheckpointInfo info = cog::peek_checkpoint(args.resume);
    cog::RunConfig eff;
    eff.model = info.model_config;
    eff.train = info.train_config;
    eff.paths = rc.paths;
    write_effective_config(out_dir, cog::to_json(eff));
    return with_precision(info.model_config.precision, [&](auto tag) {
        using S = decltype(tag);
        auto ck = cog::load_checkpoint<S>(args.resume);
        const auto trace =
            cog::train(ck.model, ck.optim, ck.step, rc.paths.corpus, ck.train_config, out_dir);
        std::cout << "resumed at step " << ck.step << "; ran to " << ck.train_config.total_steps
                  << "\n";
        if (!trace.empty()) std::cout << "final loss " << trace.back().loss << "\n";
        return 0;
    });
}

struct ProbeArgs {
    std::string checkpoint;
    std::string task = "finding-zero";
    std::vector<int> n_list{8, 16, 32, 64};
    int reference_n = -1;
    bool pre_norm = false;
    std::string tag;
    std::string out_dir = "out";
};

int cmd_probe(const ProbeArgs& args) {
    const cog::ProbeTask task = cog::probe_task_from_string(args.task);
    if (args.n_list.empty()) throw cog::config_error("probe: --n list is empty");
    const int ref = args.reference_n >= 0 ? args.reference_n : args.n_list.front();
    const cog::CheckpointInfo info = cog::peek_checkpoint(args.checkpoint);
    const std::string tag =
        args.tag.empty() ? fs::path(args.checkpoint).stem().string() : args.tag;

    nlohmann::json effective{{"command", "probe"},
                             {"checkpoint", args.checkpoint},
                             {"task", cog::to_string(task)},
                             {"n_list", args.n_list},
                             {"reference_n", ref},
                             {"pre_norm", args.pre_norm},
                             {"model_tag", tag},
                             {"out_dir", args.out_dir},
                             {"model_config", cog::to_json(info.model_config)}};
    write_effective_config(args.out_dir, effective);

    return with_precision(info.model_config.precision, [&](auto tag_v) {
        using S = decltype(tag_v);
        const auto ck = cog::load_checkpoint<S>(args.checkpoint);
        const cog::ProbeReport report =
            cog::collapse_probe(ck.model, task, args.n_list, ref, args.pre_norm, tag);
        std::printf("%8s  %14s  %12s\n", "n", "linf_norm", "normalized");
        for (const auto& e : report.entries)
            std::printf("%8d  %14.6e  %12.6f\n", e.n, e.linf_norm, e.normalized);
        write_json_report(fs::path(args.out_dir) / ("probe_" + cog::to_string(task) + ".json"),
                          cog::to_json(report));
        return 0;
    });
}

struct TextArgs {
    std::string checkpoint;
    std::string text;
    std::string text_file;
    std::string out_dir = "out";
};

int cmd_diagnose(const TextArgs& args) {
    const std::string text = read_text_arg(args.text, args.text_file, "diagnose");
    const cog::CheckpointInfo info = cog::peek_checkpoint(args.checkpoint);
    nlohmann::json effective{{"command", "diagnose"},
                             {"checkpoint", args.checkpoint},
                             {"text_bytes", text.size()},
                             {"out_dir", args.out_dir},
                             {"model_config", cog::to_json(info.model_config)}};
    write_effective_config(args.out_dir, effective);

    return with_precision(info.model_config.precision, [&](auto tag) {
        using S = decltype(tag);
        const auto ck = cog::load_checkpoint<S>(args.checkpoint);
        const cog::DiagnosticsReport report = cog::attn_diagnostics(ck.model, text);
        for (std::size_t l = 0; l < report.layers.size(); ++l)
            for (std::size_t h = 0; h < report.layers[l].size(); ++h) {
                const auto& d = report.layers[l][h];
                std::printf("layer %zu head %zu: sink %.4f neg %.4f ov %s\n", l, h, d.sink_score,
                            d.neg_fraction,
                            d.ov_positivity ? std::to_string(*d.ov_positivity).c_str() : "n/a");
            }
        write_json_report(fs::path(args.out_dir) / "diagnostics.json", cog::to_json(report));
        return 0;
    });
}

struct BenchArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    std::vector<int> lengths{64, 128, 256, 512};
    int reps = 5;
    std::string out_dir = "out";
};

int cmd_bench(const BenchArgs& args) {
    const nlohmann::json tree = load_config_tree(args.config_path, args.overrides);
    cog::RunConfig rc = cog::run_config_from_json(tree);
    nlohmann::json effective{{"command", "bench"},
                             {"lengths", args.lengths},
                             {"reps", args.reps},
                             {"out_dir", args.out_dir},
                             {"model_config", cog::to_json(rc.model)}};
    write_effective_config(args.out_dir, effective);

    return with_precision(rc.model.precision, [&](auto tag) {
        using S = decltype(tag);
        const cog::BenchReport report = cog::timing_bench<S>(rc.model, args.lengths, args.reps);
        std::printf("%6s  %16s  %16s  %8s\n", "len", "softmax ms/step", "cog ms/step", "ratio");
        for (const auto& e : report.entries)
            std::printf("%6d  %16.3f  %16.3f  %8.3f\n", e.len, e.softmax_ms_per_step,
                        e.cog_ms_per_step, e.ratio);
        write_json_report(fs::path(args.out_dir) / "bench.json", cog::to_json(report));
        return 0;
    });
}

int cmd_export_attn(const TextArgs& args) {
    const std::string text = read_text_arg(args.text, args.text_file, "export-attn");
    const cog::CheckpointInfo info = cog::peek_checkpoint(args.checkpoint);
    nlohmann::json effective{{"command", "export-attn"},
                             {"checkpoint", args.checkpoint},
                             {"text_bytes", text.size()},
                             {"out_dir", args.out_dir},
                             {"model_config", cog::to_json(info.model_config)}};
    write_effective_config(args.out_dir, effective);

    return with_precision(info.model_config.precision, [&](auto tag) {
        using S = decltype(tag);
        const auto ck = cog::load_checkpoint<S>(args.checkpoint);
        const auto files = cog::export_attention_maps(ck.model, text, args.out_dir);
        std::cout << "wrote " << files.size() << " attention maps to " << args.out_dir << "\n";
        return 0;
    });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cogformer: signed-attention toy language model trainer and probes"};
    app.require_subcommand(1);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train a model from a RunConfig JSON");
    train_cmd->add_option("--config", train_args.config_path, "RunConfig JSON file");
    train_cmd->add_option("--set", train_args.overrides,
                          "dotted-path override, e.g. train.total_steps=100 (repeatable)");
    train_cmd->add_option("--resume", train_args.resume,
                          "checkpoint to continue from (uses its stored configs)");

    ProbeArgs probe_args;
    auto* probe_cmd =
        app.add_subcommand("probe", "representational-collapse probe on a checkpoint");
    probe_cmd->add_option("--checkpoint", probe_args.checkpoint, "checkpoint file")->required();
    probe_cmd->add_option("--task", probe_args.task, "finding-zero or counting-ones");
    probe_cmd->add_option("--n", probe_args.n_list, "sequence sizes")->delimiter(',');
    probe_cmd->add_option("--ref", probe_args.reference_n,
                          "reference n for normalization (default: first of --n)");
    probe_cmd->add_flag("--pre-norm", probe_args.pre_norm,
                        "capture the representation before the final norm");
    probe_cmd->add_option("--tag", probe_args.tag, "model tag recorded in the report");
    probe_cmd->add_option("--out-dir", probe_args.out_dir, "output directory");

    TextArgs diag_args;
    auto* diag_cmd =
        app.add_subcommand("diagnose", "attention sink/sign and OV-positivity diagnostics");
    diag_cmd->add_option("--checkpoint", diag_args.checkpoint, "checkpoint file")->required();
    diag_cmd->add_option("--text", diag_args.text, "prompt text");
    diag_cmd->add_option("--text-file", diag_args.text_file, "file with prompt text");
    diag_cmd->add_option("--out-dir", diag_args.out_dir, "output directory");

    BenchArgs bench_args;
    auto* bench_cmd = app.add_subcommand("bench", "per-step timing for softmax vs cog policies");
    bench_cmd->add_option("--config", bench_args.config_path, "RunConfig JSON for the model");
    bench_cmd->add_option("--set", bench_args.overrides, "dotted-path override (repeatable)");
    bench_cmd->add_option("--lengths", bench_args.lengths, "sequence lengths")->delimiter(',');
    bench_cmd->add_option("--reps", bench_args.reps, "timed repetitions per config");
    bench_cmd->add_option("--out-dir", bench_args.out_dir, "output directory");

    TextArgs export_args;
    auto* export_cmd =
        app.add_subcommand("export-attn", "write per-head attention maps as PPM images");
    export_cmd->add_option("--checkpoint", export_args.checkpoint, "checkpoint file")->required();
    export_cmd->add_option("--text", export_args.text, "prompt text");
    export_cmd->add_option("--text-file", export_args.text_file, "file with prompt text");
    export_cmd->add_option("--out-dir", export_args.out_dir, "output directory");

    try {
        app.parse(argc, argv);
        if (*train_cmd) return cmd_train(train_args);
        if (*probe_cmd) return cmd_probe(probe_args);
        if (*diag_cmd) return cmd_diagnose(diag_args);
        if (*bench_cmd) return cmd_bench(bench_args);
        if (*export_cmd) return cmd_export_attn(export_args);
        return 2;
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const cog::numeric_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
