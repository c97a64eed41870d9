#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "repq/histogram.hpp"
#include "repq/model.hpp"
#include "repq/quant.hpp"

namespace repq {

// Scale selection strategies. MinMax takes the full observed range; the rest
// search clip thresholds over the histogram and keep the one minimizing the
// named distance. KlNaive evaluates log(p/q) directly in float32 and is kept
// as a baseline; KlTransformed evaluates log(p) - log(q), which stays finite
// when bin ratios leave the float32 range.
enum class Metric { MinMax, Mse, Cosine, KlNaive, KlTransformed };

const char* to_string(Metric m);
Metric metric_from_string(const std::string& s);

struct CalibConfig {
    Metric metric = Metric::KlTransformed;
    bool relu_fused = true;
    int bins = 2048;
    // First clip candidate, as a bin index. 0 means the default 2^(bits-1).
    int grid_start_bin = 0;
    // Added to every quantized bin before normalization so the divergence is
    // defined everywhere.
    float smoothing_eps = 1e-9f;
    // Calibration batch size the pipeline asks for by default.
    int sample_count = 32;

    void validate(int bits) const;
};

// KL divergence between two histograms of equal length that each sum to 1.
// kl_divergence computes sum p * (log p - log q); kl_divergence_naive
// computes sum p * log(p / q) with the ratio formed in float32.
float kl_divergence(std::span<const float> p, std::span<const float> q);
float kl_divergence_naive(std::span<const float> p, std::span<const float> q);

// Picks a quantization scale for one layer from its magnitude histogram.
QuantParams search_scale(const Histogram& h, int bits, const CalibConfig& cfg);

// Runs the calibration samples through the model, captures every conv
// layer's pre-ReLU output and returns one histogram per layer.
std::vector<Histogram> collect_network_histograms(const RepModel& m,
                                                  std::span<const Tensor> samples,
                                                  const CalibConfig& cfg);

// collect_network_histograms followed by search_scale on every layer.
std::map<int, QuantParams> calibrate_network(const RepModel& m,
                                             std::span<const Tensor> samples,
                                             const CalibConfig& cfg, int bits);

} // namespace repq
