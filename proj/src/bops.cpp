#include "repq/bops.hpp"

#include <string>

namespace repq {

namespace {

bool supported_depth(int bits) {
    return bits == 4 || bits == 8 || bits == 16 || bits == 32;
}

} // namespace

BitConfig BitConfig::uniform(const RepModel& m, int weight_bits, int act_bits,
                             WeightScheme scheme) {
    BitConfig cfg;
    cfg.conv_layers.assign(static_cast<std::size_t>(m.layer_count()),
                           LayerBits{weight_bits, act_bits, scheme});
    return cfg;
}

void BitConfig::validate() const {
    if (conv_layers.empty()) throw ArgumentError("bit config has no layers");
    for (std::size_t i = 0; i < conv_layers.size(); ++i) {
        const LayerBits& l = conv_layers[i];
        if (!supported_depth(l.weight_bits) || !supported_depth(l.act_bits)) {
            throw ArgumentError("layer " + std::to_string(i) +
                                ": supported bit depths are 4, 8, 16 and 32");
        }
    }
    if (head && (!supported_depth(head->weight_bits) || !supported_depth(head->act_bits))) {
        throw ArgumentError("head: supported bit depths are 4, 8, 16 and 32");
    }
}

BopsBreakdown count_bops(const RepModel& m, const BitConfig& cfg) {
    m.validate();
    cfg.validate();
    if (cfg.conv_layers.size() != static_cast<std::size_t>(m.layer_count())) {
        throw ArgumentError("bit config has " + std::to_string(cfg.conv_layers.size()) +
                            " layers, model has " + std::to_string(m.layer_count()));
    }

    BopsBreakdown out;
    int h = m.input_height;
    int w = m.input_width;
    for (int i = 0; i < m.layer_count(); ++i) {
        const LayerBits& lb = cfg.conv_layers[static_cast<std::size_t>(i)];
        const int stride = m.layer_stride(i);
        // 3x3 kernel, padding 1
        const int oh = (h + 2 - 3) / stride + 1;
        const int ow = (w + 2 - 3) / stride + 1;
        if (oh <= 0 || ow <= 0) {
            throw ArgumentError("layer " + std::to_string(i) +
                                ": output spatial extent is not positive for this input size");
        }

        const std::uint64_t spatial = static_cast<std::uint64_t>(oh) * static_cast<std::uint64_t>(ow);
        const std::uint64_t channel_pairs = static_cast<std::uint64_t>(m.layer_out_channels(i)) *
                                            static_cast<std::uint64_t>(m.layer_in_channels(i));
        std::uint64_t macs = channel_pairs * 9 * spatial;
        if (lb.scheme == WeightScheme::Cfws) {
            // the coarse 1x1 center path runs alongside the 3x3 path
            macs += channel_pairs * spatial;
        }

        BopsBreakdown::Entry e;
        e.layer = i;
        e.macs = macs;
        e.bops = static_cast<std::uint64_t>(lb.weight_bits) *
                 static_cast<std::uint64_t>(lb.act_bits) * macs;
        out.total_bops += e.bops;
        out.conv_layers.push_back(e);

        h = oh;
        w = ow;
    }

    if (m.head) {
        const LayerBits hb = cfg.head.value_or(cfg.conv_layers.back());
        BopsBreakdown::Entry e;
        e.layer = -1;
        e.macs = static_cast<std::uint64_t>(m.head->classes) *
                 static_cast<std::uint64_t>(m.head->features);
        e.bops = static_cast<std::uint64_t>(hb.weight_bits) *
                 static_cast<std::uint64_t>(hb.act_bits) * e.macs;
        out.total_bops += e.bops;
        out.head = e;
    }
    return out;
}

} // namespace repq
