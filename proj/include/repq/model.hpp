#pragma once

#include <map>
#include <optional>
#include <set>
#include <variant>
#include <vector>

#include "repq/repblock.hpp"

namespace repq {

// Global average pool over the spatial dimensions followed by a linear
// classifier.
struct GapLinearHead {
    int classes = 0;
    int features = 0;
    std::vector<float> weight; // classes x features, row-major
    std::vector<float> bias;   // classes

    void validate() const;
};

// A small feed-forward stack of 3x3 blocks (padding 1), each followed by
// ReLU, with an optional classifier head. Layers can be in multi-branch or
// fused form; a model mixing both is still runnable.
struct RepModel {
    using Layer = std::variant<FusedConv, RepBlock>;

    int input_channels = 0;
    int input_height = 0;
    int input_width = 0;
    std::vector<Layer> layers;
    std::optional<GapLinearHead> head;

    int layer_count() const { return static_cast<int>(layers.size()); }
    bool fully_fused() const;
    int layer_out_channels(int idx) const;
    int layer_in_channels(int idx) const;
    int layer_stride(int idx) const;
    // logit dimension: classes with a head, final channel count without
    int logit_dim() const;
    void validate() const;
};

// Clips one layer's pre-ReLU output to [-bound, bound] during forward.
struct LayerClip {
    int layer = -1;
    float bound = 0.0f;
};

struct ForwardResult {
    int batch = 0;
    int logit_dim = 0;
    std::vector<float> logits;      // batch x logit_dim, row-major
    std::map<int, Tensor> captured; // layer index -> pre-ReLU conv output

    std::span<const float> sample_logits(int n) const;
    std::vector<int> argmax() const; // per-sample top-1 index
};

ForwardResult forward(const RepModel& m, const Tensor& x,
                      const std::set<int>& capture = {},
                      const std::optional<LayerClip>& act_clip = std::nullopt);

// Global average pool plus the (optional) linear head, shared by the float
// and the quantized executor. Without a head the pooled channels are the
// logits.
ForwardResult pool_and_classify(const Tensor& final_act,
                                const std::optional<GapLinearHead>& head);

} // namespace repq
