#pragma once

#include <optional>
#include <vector>

#include "repq/tensor.hpp"

namespace repq {

// One convolution branch with its batch norm.
struct ConvBranch {
    Tensor weight; // OIHW
    BatchNormParams bn;
};

// Training-time block: a 3x3 conv branch, an optional 1x1 conv branch and an
// optional identity branch, each batch-normalized, summed before the
// network's ReLU. The identity branch only exists when input and output
// channels match and the stride is 1.
struct RepBlock {
    ConvBranch branch3x3;
    std::optional<ConvBranch> branch1x1;
    std::optional<BatchNormParams> branch_id;
    int stride = 1;

    int out_channels() const { return branch3x3.weight.dim(0); }
    int in_channels() const { return branch3x3.weight.dim(1); }
    void validate() const;
};

// Inference-time single 3x3 convolution equivalent to a RepBlock.
struct FusedConv {
    Tensor weight; // O x I x 3 x 3
    std::vector<float> bias;
    int stride = 1;
    bool followed_by_relu = true;
};

// Folds each branch's batch norm, pads the 1x1 kernel into the 3x3 center,
// expresses the identity branch as a center-only kernel and sums everything
// into one conv.
FusedConv merge_repblock(const RepBlock& b);

// Multi-branch forward pass (sum of branch outputs, before ReLU).
Tensor repblock_forward(const RepBlock& b, const Tensor& x);

} // namespace repq
