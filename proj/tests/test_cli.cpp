#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <fstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

#include "testutil.hpp"

using testutil::TempDir;

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

// Runs the binary with stdout and stderr captured.
RunResult run_cli(const std::string& args, const std::filesystem::path& scratch) {
    static int counter = 0;
    const auto capture = scratch / ("cli-out-" + std::to_string(counter++) + ".txt");
    const std::string cmd =
        std::string(REPQ_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
    const int rc = std::system(cmd.c_str());

    RunResult r;
    r.code = WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    std::ifstream f(capture);
    r.output.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    return r;
}

// Small network so the suite stays fast.
const std::string kGenFlags =
    " --widths 8,8 --strides 1,2 --input-height 8 --input-width 8 --classes 4"
    " --calib-samples 8 --eval-samples 8";

} // namespace

TEST_CASE("help exits cleanly") {
    TempDir tmp("cli-help");
    const RunResult r = run_cli("--help", tmp.path());
    CHECK(r.code == 0);
    CHECK(r.output.find("quantize") != std::string::npos);
}

TEST_CASE("gen is deterministic across runs") {
    TempDir tmp("cli-gen");
    const auto a = tmp / "a";
    const auto b = tmp / "b";
    const RunResult ra = run_cli("gen --seed 5 --out " + a.string() + kGenFlags, tmp.path());
    REQUIRE(ra.code == 0);
    const RunResult rb = run_cli("gen --seed 5 --out " + b.string() + kGenFlags, tmp.path());
    REQUIRE(rb.code == 0);

    for (const char* sub : {"model", "calib", "eval"}) {
        CHECK(std::filesystem::is_directory(a / sub));
    }
    CHECK(testutil::same_tree(a, b));

    // another seed gives other weights
    const auto c = tmp / "c";
    REQUIRE(run_cli("gen --seed 6 --out " + c.string() + kGenFlags, tmp.path()).code == 0);
    CHECK_FALSE(testutil::same_bytes(a / "model" / "layer0_b3_weight.bin",
                                     c / "model" / "layer0_b3_weight.bin"));
}

TEST_CASE("full pipeline with byte-identical reruns") {
    TempDir tmp("cli-pipe");
    const auto gen = tmp / "gen";
    REQUIRE(run_cli("gen --seed 11 --out " + gen.string() + kGenFlags, tmp.path()).code == 0);

    const auto fused = tmp / "fused";
    const RunResult rf = run_cli(
        "fuse --model " + (gen / "model").string() + " --out " + fused.string(), tmp.path());
    REQUIRE(rf.code == 0);
    CHECK(rf.output.find("deviation") != std::string::npos);

    // fusing the already fused model just copies it
    const auto fused2 = tmp / "fused2";
    const RunResult rf2 = run_cli(
        "fuse --model " + fused.string() + " --out " + fused2.string(), tmp.path());
    REQUIRE(rf2.code == 0);
    CHECK(rf2.output.find("already fused") != std::string::npos);
    CHECK(testutil::same_tree(fused, fused2));

    const std::string quant_args = "quantize --model " + fused.string() + " --samples " +
                                   (gen / "calib").string() + " --eval " +
                                   (gen / "eval").string() + " --seed 11 --out ";
    const auto q1 = tmp / "q1";
    const auto q2 = tmp / "q2";
    const RunResult rq = run_cli(quant_args + q1.string(), tmp.path());
    REQUIRE(rq.code == 0);
    CHECK(rq.output.find("logit cosine") != std::string::npos);
    for (const char* f : {"report.json", "layers.csv", "histograms.json"}) {
        CHECK(std::filesystem::exists(q1 / f));
    }
    CHECK(std::filesystem::is_directory(q1 / "model"));
    REQUIRE(run_cli(quant_args + q2.string(), tmp.path()).code == 0);
    CHECK(testutil::same_tree(q1, q2));

    const std::string analyze_args = "analyze --model " + fused.string() + " --samples " +
                                     (gen / "eval").string() +
                                     " --layers 0,1 --alphas 1.0,0.5,0.25 --out ";
    const auto a1 = tmp / "a1";
    const auto a2 = tmp / "a2";
    REQUIRE(run_cli(analyze_args + a1.string(), tmp.path()).code == 0);
    for (const char* f : {"sweep.json", "sweep.csv", "bops.json", "bops.csv"}) {
        CHECK(std::filesystem::exists(a1 / f));
    }
    REQUIRE(run_cli(analyze_args + a2.string(), tmp.path()).code == 0);
    CHECK(testutil::same_tree(a1, a2));

    const RunResult rr = run_cli("report " + (q1 / "report.json").string(), tmp.path());
    CHECK(rr.code == 0);
    CHECK(rr.output.find("quantization report") != std::string::npos);
}

TEST_CASE("config file supplies defaults and flags override it") {
    TempDir tmp("cli-config");
    const auto gen = tmp / "gen";
    REQUIRE(run_cli("gen --seed 13 --out " + gen.string() + kGenFlags, tmp.path()).code == 0);
    const auto fused = tmp / "fused";
    REQUIRE(run_cli("fuse --model " + (gen / "model").string() + " --out " + fused.string(),
                    tmp.path())
                .code == 0);

    const auto cfg = tmp / "quant.json";
    std::ofstream(cfg) << R"({"metric": "minmax", "scheme": "minmax", "seed": 13})";

    const std::string base = "quantize --model " + fused.string() + " --samples " +
                             (gen / "calib").string() + " --out ";
    const std::string with_cfg = " --config " + cfg.string();
    const auto q1 = tmp / "q1";
    REQUIRE(run_cli(base + q1.string() + with_cfg, tmp.path()).code == 0);
    auto report = nlohmann::json::parse(std::ifstream(q1 / "report.json"));
    CHECK(report["metric"] == "minmax");
    CHECK(report["weight_scheme"] == "minmax");
    CHECK(report["seed"] == 13);

    const auto q2 = tmp / "q2";
    REQUIRE(run_cli(base + q2.string() + with_cfg + " --metric kl-transformed", tmp.path())
                .code == 0);
    report = nlohmann::json::parse(std::ifstream(q2 / "report.json"));
    CHECK(report["metric"] == "kl-transformed");
    CHECK(report["weight_scheme"] == "minmax");

    const RunResult bad = run_cli(base + (tmp / "q3").string() + " --config " +
                                      (tmp / "absent.json").string(),
                                  tmp.path());
    CHECK(bad.code == 2);
}

TEST_CASE("failures map to stable exit codes") {
    TempDir tmp("cli-err");
    const auto gen = tmp / "gen";
    REQUIRE(run_cli("gen --seed 17 --out " + gen.string() + kGenFlags, tmp.path()).code == 0);
    const auto fused = tmp / "fused";
    REQUIRE(run_cli("fuse --model " + (gen / "model").string() + " --out " + fused.string(),
                    tmp.path())
                .code == 0);

    SUBCASE("missing model directory is a format error") {
        const RunResult r = run_cli("quantize --model " + (tmp / "nothing").string() +
                                        " --samples " + (gen / "calib").string() + " --out " +
                                        (tmp / "q").string(),
                                    tmp.path());
        CHECK(r.code == 2);
    }

    SUBCASE("samples from another architecture are a shape error") {
        const auto other = tmp / "other";
        REQUIRE(run_cli("gen --seed 18 --out " + other.string() +
                            " --widths 8,8 --strides 1,2 --input-height 12 --input-width 12"
                            " --classes 4 --calib-samples 4 --eval-samples 4",
                        tmp.path())
                    .code == 0);
        const RunResult r = run_cli("quantize --model " + fused.string() + " --samples " +
                                        (other / "calib").string() + " --out " +
                                        (tmp / "q").string(),
                                    tmp.path());
        CHECK(r.code == 3);
    }

    SUBCASE("an unreachable fuse tolerance is a numeric error") {
        const RunResult r = run_cli("fuse --model " + (gen / "model").string() +
                                        " --tolerance 1e-12 --out " + (tmp / "f").string(),
                                    tmp.path());
        CHECK(r.code == 4);
        CHECK(r.output.find("deviates") != std::string::npos);
    }

    SUBCASE("bad flags and values are config errors") {
        CHECK(run_cli("quantize --frobnicate", tmp.path()).code == 5);
        CHECK(run_cli("quantize --model " + fused.string() + " --samples " +
                          (gen / "calib").string() + " --out " + (tmp / "q").string() +
                          " --metric entropy",
                      tmp.path())
                  .code == 5);
        CHECK(run_cli("gen", tmp.path()).code == 5); // --out is required
    }

    SUBCASE("quantizing a multi-branch model is a structural error") {
        const RunResult r = run_cli("quantize --model " + (gen / "model").string() +
                                        " --samples " + (gen / "calib").string() + " --out " +
                                        (tmp / "q").string(),
                                    tmp.path());
        CHECK(r.code == 6);
        CHECK(r.output.find("fuse") != std::string::npos);
    }
}
