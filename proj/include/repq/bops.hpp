#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "repq/model.hpp"
#include "repq/qmodel.hpp"

namespace repq {

// Bit assignment for one layer. Supported depths are 4, 8, 16 and 32.
struct LayerBits {
    int weight_bits = 8;
    int act_bits = 8;
    WeightScheme scheme = WeightScheme::MinMax;
};

struct BitConfig {
    std::vector<LayerBits> conv_layers; // one per model layer
    std::optional<LayerBits> head;      // defaults to conv settings when absent

    static BitConfig uniform(const RepModel& m, int weight_bits, int act_bits,
                             WeightScheme scheme);
    void validate() const;
};

// Bit operations: weight_bits * act_bits * MACs, summed over layers. A conv
// layer's MAC count is out_channels * in_channels * kh * kw * out_h * out_w
// for one sample; layers under the dual-scale weight scheme add the 1x1
// center path on top of the 3x3 path.
struct BopsBreakdown {
    struct Entry {
        int layer = 0; // -1 for the head
        std::uint64_t macs = 0;
        std::uint64_t bops = 0;
    };
    std::vector<Entry> conv_layers;
    std::optional<Entry> head;
    std::uint64_t total_bops = 0;

    double total_gbops() const { return static_cast<double>(total_bops) * 1e-9; }
};

BopsBreakdown count_bops(const RepModel& m, const BitConfig& cfg);

} // namespace repq
