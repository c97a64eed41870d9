#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "repq/tensor.hpp"

namespace repq {

// Magnitude histogram of an activation stream: uniform bins over
// [0, max_abs]. Zeros land in bin 0, so the counts always sum to the number
// of observed values.
struct Histogram {
    int bin_count = 0;
    float bin_width = 0.0f;
    float max_abs = 0.0f;
    std::uint64_t total = 0;
    bool relu_fused = false; // values were rectified before binning
    std::vector<std::uint64_t> counts;

    bool degenerate() const { return total == 0 || max_abs == 0.0f; }
    void validate() const;
};

// Two passes over the activation stream: the first finds the maximum
// magnitude, the second fills the counts. With relu_fused set, values are
// passed through max(v, 0) first, which matches networks whose conv outputs
// feed a ReLU.
Histogram collect_histogram(std::span<const Tensor> activations, int bins,
                            bool relu_fused);

// Calibration cache: one JSON file with every layer's histogram, so scale
// search can be re-run without re-running inference.
void save_histogram_cache(const std::filesystem::path& file,
                          std::span<const Histogram> layer_histograms);
std::vector<Histogram> load_histogram_cache(const std::filesystem::path& file);

} // namespace repq
