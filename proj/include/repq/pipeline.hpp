#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "repq/calibrate.hpp"
#include "repq/qmodel.hpp"
#include "repq/report.hpp"
#include "repq/synthetic.hpp"

namespace repq {

// Command backends shared by the CLI and the test suites. Every command is
// deterministic: rerunning with the same inputs and seed writes identical
// bytes.

struct GenOptions {
    ArchSpec arch;
    std::uint64_t seed = 0;
    int calib_count = 32; // unlabeled calibration set
    int eval_count = 256; // self-labeled evaluation set
    std::filesystem::path out;
};

// Writes out/model, out/calib and out/eval.
void cmd_gen(const GenOptions& opt);

// Merges every rep-block in place; already-fused layers pass through.
RepModel fuse_all(const RepModel& m);

struct FuseOptions {
    std::filesystem::path model_in;
    std::filesystem::path model_out;
    int probe_count = 4;
    std::uint64_t probe_seed = 7;
    double tolerance = 1e-4;
};

struct FuseOutcome {
    bool already_fused = false;
    double max_rel_deviation = 0.0; // multi-branch vs fused, over probe inputs
};

// Merges every block and checks the fused model against the original on
// random probe batches. Deviation beyond the tolerance is an error.
FuseOutcome cmd_fuse(const FuseOptions& opt);

struct QuantizeOptions {
    std::filesystem::path model;
    std::filesystem::path samples;             // calibration set
    std::optional<std::filesystem::path> eval; // labeled set for fidelity
    std::filesystem::path out;
    WeightScheme scheme = WeightScheme::Cfws;
    Metric metric = Metric::KlTransformed;
    bool relu_fused = true;
    int bits = 8;
    std::uint64_t seed = 0;
};

// Calibrates, quantizes and measures. Writes out/model (quantized), plus
// report.json, layers.csv and histograms.json.
QuantReport cmd_quantize(const QuantizeOptions& opt);

struct AnalyzeOptions {
    std::filesystem::path model;
    std::filesystem::path samples;
    std::filesystem::path out;
    SweepTarget target = SweepTarget::Activation;
    std::vector<int> layers;    // empty means every layer
    std::vector<float> alphas;  // empty means the default grid
    int bits = 8;
    WeightScheme scheme = WeightScheme::Cfws;
    std::uint64_t seed = 0;
};

// Clip sweeps plus the BOPs table. Writes sweep.json, sweep.csv, bops.json
// and bops.csv.
void cmd_analyze(const AnalyzeOptions& opt);

// Renders a saved report as text. Returns the rendered string; the CLI
// prints it.
std::string cmd_report(const std::filesystem::path& report_file);

} // namespace repq
