// End-to-end tests that drive the installed binary through a shell, checking
// exit codes (0 success, 2 usage/config, 3 numerical) and on-disk artifacts.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

#include "cog/checkpoint.hpp"
#include "cog/model.hpp"
#include "cog/optimizer.hpp"
#include "support/synthetic_corpus.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CmdResult {
    int exit_code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path root = fs::path("test_tmp") / "cli";
    fs::create_directories(root);
    const fs::path log = root / ("cmd_" + std::to_string(counter++) + ".log");
    const std::string cmd =
        std::string(COGFORMER_BIN) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    if (WIFEXITED(status)) r.exit_code = WEXITSTATUS(status);
    std::ifstream in(log);
    r.output.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return r;
}

/// Writes the corpus and tiny run config once; trains once; reused by later
/// cases through the artifacts it leaves behind.
struct CliFixture {
    fs::path root = fs::path("test_tmp") / "cli";
    fs::path corpus = root / "corpus.txt";
    fs::path config = root / "run.json";
    fs::path out_dir = root / "run_out";

    CliFixture() {
        fs::create_directories(root);
        if (!fs::exists(corpus)) {
            std::ofstream c(corpus, std::ios::binary);
            c << testsupport::synthetic_corpus(2048);
        }
        if (!fs::exists(config)) {
            const json j{
                {"model",
                 {{"n_layers", 1},
                  {"n_heads", 2},
                  {"d_model", 16},
                  {"d_ff", 32},
                  {"vocab_size", 256},
                  {"context_len", 16},
                  {"activation_policy", "cog_except_first"},
                  {"precision", "double"},
                  {"seed", 11}}},
                {"train",
                 {{"batch_tokens", 32},
                  {"lr_peak", 1e-3},
                  {"warmup_steps", 2},
                  {"total_steps", 6},
                  {"log_every", 1},
                  {"ckpt_every", 3}}},
                {"paths", {{"corpus", corpus.string()}, {"out_dir", out_dir.string()}}}};
            std::ofstream(config) << j.dump(2);
        }
    }

    /// Runs the training command once per test binary invocation.
    const CmdResult& train_once() {
        static const CmdResult result =
            run_cli("train --config " + config.string() + " --set model.seed=123");
        return result;
    }
};

}  // namespace

TEST_CASE("train writes trace, checkpoints, and the effective config") {
    CliFixture fx;
    const auto& r = fx.train_once();
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("trained 6 steps") != std::string::npos);

    REQUIRE(fs::exists(fx.out_dir / "trace.jsonl"));
    std::ifstream trace(fx.out_dir / "trace.jsonl");
    int lines = 0;
    for (std::string line; std::getline(trace, line);) {
        CHECK(json::parse(line).contains("loss"));
        ++lines;
    }
    CHECK(lines == 6);
    CHECK(fs::exists(fx.out_dir / "ckpt_3.cogckpt"));
    CHECK(fs::exists(fx.out_dir / "ckpt_6.cogckpt"));

    REQUIRE(fs::exists(fx.out_dir / "effective_config.json"));
    std::ifstream eff_in(fx.out_dir / "effective_config.json");
    const json eff = json::parse(eff_in);
    CHECK(eff.at("model").at("seed") == 123);  // --set override is echoed back
    CHECK(eff.at("model").at("n_layers") == 1);
    CHECK(eff.at("train").at("total_steps") == 6);
}

TEST_CASE("train resumes from a checkpoint to the configured end") {
    CliFixture fx;
    REQUIRE(fx.train_once().exit_code == 0);
    const auto r = run_cli("train --config " + fx.config.string() + " --resume " +
                           (fx.out_dir / "ckpt_3.cogckpt").string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("resumed at step 3") != std::string::npos);
    CHECK(fs::exists(fx.out_dir / "ckpt_6.cogckpt"));
}

TEST_CASE("train with a missing corpus exits 2 and names the path") {
    CliFixture fx;
    const auto r = run_cli("train --config " + fx.config.string() +
                           " --set paths.corpus=no/such/corpus.txt");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("no/such/corpus.txt") != std::string::npos);
}

TEST_CASE("probe normalizes to one at the reference size") {
    CliFixture fx;
    REQUIRE(fx.train_once().exit_code == 0);
    const fs::path out = fx.root / "probe_out";
    const auto r = run_cli("probe --checkpoint " + (fx.out_dir / "ckpt_6.cogckpt").string() +
                           " --task finding-zero --n 4,8,12 --ref 4 --out-dir " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("normalized") != std::string::npos);

    REQUIRE(fs::exists(out / "probe_finding_zero.json"));
    std::ifstream in(out / "probe_finding_zero.json");
    const json report = json::parse(in);
    CHECK(report.at("reference_n") == 4);
    CHECK(report.at("entries")[0].at("normalized") == 1.0);
    CHECK(report.at("entries").size() == 3);
}

TEST_CASE("probe on a zero-write model exits 3 as a numerical failure") {
    CliFixture fx;
    // Build a checkpoint whose reference distance is exactly zero.
    cog::ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.context_len = 16;
    cfg.precision = cog::Precision::Double;
    auto m = cog::init_params<double>(cfg);
    for (auto& lay : m.layers) {
        lay.attn.w_o.setZero();
        lay.w_down.setZero();
    }
    auto optim = cog::OptimState<double>::zero_like(m);
    const fs::path ck = fx.root / "ablated.cogckpt";
    cog::save_checkpoint(m, optim, 0, cog::TrainConfig{}, ck);

    const auto r = run_cli("probe --checkpoint " + ck.string() +
                           " --task finding-zero --n 4,8 --out-dir " +
                           (fx.root / "probe3").string());
    CHECK(r.exit_code == 3);
    CHECK(r.output.find("numerical failure") != std::string::npos);
}

TEST_CASE("corrupted checkpoints are a usage error, not a crash") {
    CliFixture fx;
    REQUIRE(fx.train_once().exit_code == 0);
    const fs::path bad = fx.root / "bad.cogckpt";
    {
        std::ifstream src(fx.out_dir / "ckpt_6.cogckpt", std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(src)), {});
        bytes[0] = 'X';
        std::ofstream(bad, std::ios::binary) << bytes;
    }
    const auto r = run_cli("probe --checkpoint " + bad.string() + " --n 4");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("magic") != std::string::npos);

    const auto missing = run_cli("diagnose --checkpoint no/such.cogckpt --text hi");
    CHECK(missing.exit_code == 2);
    CHECK(missing.output.find("no/such.cogckpt") != std::string::npos);
}

TEST_CASE("diagnose writes a JSON report with one entry per head") {
    CliFixture fx;
    REQUIRE(fx.train_once().exit_code == 0);
    const fs::path out = fx.root / "diag_out";
    const auto r = run_cli("diagnose --checkpoint " + (fx.out_dir / "ckpt_6.cogckpt").string() +
                           " --text \"hello world\" --out-dir " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("layer 0 head 0") != std::string::npos);
    REQUIRE(fs::exists(out / "diagnostics.json"));
    std::ifstream in(out / "diagnostics.json");
    const json report = json::parse(in);
    CHECK(report.at("layers").size() == 1);
    CHECK(report.at("layers")[0].size() == 2);
}

TEST_CASE("export-attn writes one map per head") {
    CliFixture fx;
    REQUIRE(fx.train_once().exit_code == 0);
    const fs::path out = fx.root / "attn_out";
    const auto r = run_cli("export-attn --checkpoint " + (fx.out_dir / "ckpt_6.cogckpt").string() +
                           " --text hello --out-dir " + out.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(out / "layer0_head0.ppm"));
    CHECK(fs::exists(out / "layer0_head1.ppm"));

    const auto both = run_cli("export-attn --checkpoint " +
                              (fx.out_dir / "ckpt_6.cogckpt").string() +
                              " --text hi --text-file also.txt");
    CHECK(both.exit_code == 2);  // --text and --text-file are mutually exclusive
}

TEST_CASE("bench records both kernels for each requested length") {
    CliFixture fx;
    const fs::path out = fx.root / "bench_out";
    const auto r = run_cli(
        "bench --set model.n_layers=1 --set model.d_model=16 --set model.n_heads=2"
        " --set model.d_ff=32 --lengths 8,16 --reps 3 --out-dir " +
        out.string());
    CHECK(r.exit_code == 0);
    REQUIRE(fs::exists(out / "bench.json"));
    std::ifstream in(out / "bench.json");
    const json report = json::parse(in);
    REQUIRE(report.at("entries").size() == 2);
    for (const auto& e : report.at("entries")) {
        CHECK(e.at("softmax_ms_per_step").get<double>() > 0.0);
        CHECK(e.at("cog_ms_per_step").get<double>() > 0.0);
        CHECK(e.at("ratio").get<double>() > 0.0);
    }
}

TEST_CASE("usage errors exit 2 and help exits 0") {
    CHECK(run_cli("").exit_code == 2);               // a subcommand is required
    CHECK(run_cli("launch").exit_code == 2);         // unknown subcommand
    CHECK(run_cli("probe").exit_code == 2);          // --checkpoint is required
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("train --help").exit_code == 0);
    const auto bad_set = run_cli("train --set not_a_pair");
    CHECK(bad_set.exit_code == 2);
}
