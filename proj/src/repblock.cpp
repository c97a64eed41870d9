#include "repq/repblock.hpp"

#include <cmath>
#include <string>

namespace repq {

void RepBlock::validate() const {
    const Tensor& w3 = branch3x3.weight;
    if (w3.layout() != Layout::WgtOIHW || w3.dim(2) != 3 || w3.dim(3) != 3) {
        throw StructuralError("rep block: main branch kernel must be OIHW 3x3");
    }
    if (stride < 1) throw StructuralError("rep block: stride must be at least 1");
    branch3x3.bn.validate();
    if (branch3x3.bn.channels() != w3.dim(0)) {
        throw StructuralError("rep block: main branch batch norm does not match output channels");
    }

    if (branch1x1) {
        const Tensor& w1 = branch1x1->weight;
        if (w1.layout() != Layout::WgtOIHW || w1.dim(2) != 1 || w1.dim(3) != 1) {
            throw StructuralError("rep block: side branch kernel must be OIHW 1x1");
        }
        if (w1.dim(0) != w3.dim(0) || w1.dim(1) != w3.dim(1)) {
            throw StructuralError("rep block: side branch channels do not match the main branch");
        }
        branch1x1->bn.validate();
        if (branch1x1->bn.channels() != w3.dim(0)) {
            throw StructuralError("rep block: side branch batch norm does not match output channels");
        }
    }

    if (branch_id) {
        if (w3.dim(0) != w3.dim(1)) {
            throw StructuralError("rep block: identity branch requires matching channel counts, got " +
                                  std::to_string(w3.dim(1)) + " in, " + std::to_string(w3.dim(0)) + " out");
        }
        if (stride != 1) {
            throw StructuralError("rep block: identity branch requires stride 1, got stride " +
                                  std::to_string(stride));
        }
        branch_id->validate();
        if (branch_id->channels() != w3.dim(0)) {
            throw StructuralError("rep block: identity batch norm does not match channels");
        }
    }
}

FusedConv merge_repblock(const RepBlock& b) {
    b.validate();
    const int o = b.out_channels();

    auto [w, bias3] = fold_bn(b.branch3x3.weight, {}, b.branch3x3.bn);
    std::vector<double> bias(static_cast<std::size_t>(o));
    for (int oc = 0; oc < o; ++oc) bias[static_cast<std::size_t>(oc)] = bias3[static_cast<std::size_t>(oc)];

    if (b.branch1x1) {
        auto [w1, bias1] = fold_bn(b.branch1x1->weight, {}, b.branch1x1->bn);
        for (int oc = 0; oc < o; ++oc) {
            for (int ic = 0; ic < b.in_channels(); ++ic) {
                w.at(oc, ic, 1, 1) += w1.at(oc, ic, 0, 0);
            }
            bias[static_cast<std::size_t>(oc)] += bias1[static_cast<std::size_t>(oc)];
        }
    }

    if (b.branch_id) {
        // The identity is a center-only kernel scaled by the branch's
        // normalization.
        const BatchNormParams& bn = *b.branch_id;
        for (int oc = 0; oc < o; ++oc) {
            const std::size_t c = static_cast<std::size_t>(oc);
            const double scale = static_cast<double>(bn.gamma[c]) /
                                 std::sqrt(static_cast<double>(bn.running_var[c]) +
                                           static_cast<double>(bn.epsilon));
            w.at(oc, oc, 1, 1) += static_cast<float>(scale);
            bias[c] += static_cast<double>(bn.beta[c]) -
                       static_cast<double>(bn.running_mean[c]) * scale;
        }
    }

    FusedConv f;
    f.weight = std::move(w);
    f.bias.resize(static_cast<std::size_t>(o));
    for (int oc = 0; oc < o; ++oc) {
        f.bias[static_cast<std::size_t>(oc)] = static_cast<float>(bias[static_cast<std::size_t>(oc)]);
    }
    f.stride = b.stride;
    f.followed_by_relu = true;
    return f;
}

Tensor repblock_forward(const RepBlock& b, const Tensor& x) {
    b.validate();

    Tensor y = apply_bn(conv2d(x, b.branch3x3.weight, {}, b.stride, 1), b.branch3x3.bn);

    if (b.branch1x1) {
        const Tensor y1 = apply_bn(conv2d(x, b.branch1x1->weight, {}, b.stride, 0), b.branch1x1->bn);
        for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += y1.data()[i];
    }

    if (b.branch_id) {
        const Tensor yi = apply_bn(x, *b.branch_id);
        for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += yi.data()[i];
    }
    return y;
}

} // namespace repq
