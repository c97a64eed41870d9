#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "repq/bops.hpp"
#include "repq/model_io.hpp"
#include "repq/qmodel.hpp"
#include "repq/sweep.hpp"

namespace repq {

// Cosine similarity of two equal-length vectors. Bitwise-identical inputs
// return exactly 1.
float cosine_similarity(std::span<const float> a, std::span<const float> b);

// Signal-to-quantization-noise ratio in dB, clamped to [-200, 200] so an
// exact match stays representable.
double sqnr_db(std::span<const float> reference, std::span<const float> test);

struct LayerFidelity {
    int layer = 0;
    double sqnr_db = 0.0;
};

struct FidelitySection {
    std::vector<LayerFidelity> per_layer; // pre-ReLU conv outputs, fp vs quantized
    float logit_cosine = 0.0f;
    // top-1 match rate of the quantized model against the sample labels;
    // absent when the sample set is unlabeled
    std::optional<float> top1_agreement;
};

// Runs both models over the samples and compares them layer by layer and at
// the logits. The two models must describe the same architecture.
FidelitySection fidelity_report(const RepModel& fp, const QuantizedModel& q,
                                const SampleSet& samples);

// Everything the quantize pipeline measured, serializable to JSON without
// losing a bit and re-loadable from it.
struct QuantReport {
    std::uint64_t seed = 0;
    std::string weight_scheme;
    std::string metric;
    bool relu_fused = true;
    int weight_bits = 8;
    int act_bits = 8;
    int calib_sample_count = 0;
    int eval_sample_count = 0;

    struct LayerEntry {
        int layer = 0;
        std::string scheme;
        float weight_scale = 0.0f;              // fine scale under cfws
        std::optional<float> coarse_scale;      // cfws only
        float act_scale = 0.0f;
        double sqnr_db = 0.0;
        std::uint64_t macs = 0;
        std::uint64_t bops = 0;
    };
    std::vector<LayerEntry> layers;

    std::uint64_t total_bops = 0;
    double total_gbops = 0.0;
    float logit_cosine = 0.0f;
    std::optional<float> top1_agreement;

    nlohmann::ordered_json to_json() const;
    static QuantReport from_json(const nlohmann::ordered_json& j);
    void save(const std::filesystem::path& file) const;
    static QuantReport load(const std::filesystem::path& file);
    // one row per layer
    void write_layers_csv(const std::filesystem::path& file) const;
};

// Sweep curve serialization shared by the analyze command and its tests.
nlohmann::ordered_json sweeps_to_json(std::span<const SweepCurve> curves);
std::vector<SweepCurve> sweeps_from_json(const nlohmann::ordered_json& j);
// one row per sweep point
void write_sweep_csv(const std::filesystem::path& file, std::span<const SweepCurve> curves);

nlohmann::ordered_json bops_to_json(const BopsBreakdown& b, const BitConfig& cfg);
void write_bops_csv(const std::filesystem::path& file, const BopsBreakdown& b,
                    const BitConfig& cfg);

// Float formatting used in every CSV: shortest digits that parse back to the
// same value.
std::string format_float(double v);

} // namespace repq
