#pragma once

#include <cstdint>
#include <vector>

#include "repq/model.hpp"
#include "repq/model_io.hpp"

namespace repq {

// Architecture description for generated test networks.
struct ArchSpec {
    int input_channels = 3;
    int input_height = 16;
    int input_width = 16;
    std::vector<int> widths = {16, 16, 32, 32};  // out channels per block
    std::vector<int> strides = {1, 2, 1, 2};
    int classes = 8;
    // When set, the 1x1 branches are constructed so every fused kernel's
    // center-value range strictly contains its surround-value range.
    bool center_dominant = false;

    void validate() const;
};

// The configuration the bundled test model and the documentation use.
ArchSpec reference_arch();

// Builds a multi-branch model with random weights. Activations are
// equalized layer by layer on a probe batch so no layer saturates or dies,
// which keeps quantization experiments on the model meaningful. Same spec and
// seed give a bit-identical model.
RepModel generate_model(const ArchSpec& spec, std::uint64_t seed);

// Standard-normal input batch. When label_with_model is set, each sample is
// labeled with the model's own top-1 prediction.
SampleSet generate_samples(const RepModel& m, int count, std::uint64_t seed,
                           bool label_with_model);

} // namespace repq
