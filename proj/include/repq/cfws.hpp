#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "repq/quant.hpp"
#include "repq/tensor.hpp"

namespace repq {

// Dual-scale integer form of a 3x3 kernel. Kernel centers get their own
// coarse scale; the rounding residual of each center is re-inserted among the
// surround weights and the union is quantized with a fine scale. The kernel is
// reconstructed as dequant(fine) plus dequant(coarse) at the center positions.
struct CFWSWeights {
    int out_channels = 0;
    int in_channels = 0;
    int bits = 8;
    float coarse_scale = 1.0f;
    float fine_scale = 1.0f;
    std::vector<std::int32_t> coarse; // out_channels * in_channels center codes
    std::vector<std::int32_t> fine;   // out_channels * in_channels * 9 codes

    void validate() const;
};

// Splits a 3x3 kernel into its center values (as a 1x1 kernel) and the kernel
// with centers zeroed. Every weight lands in exactly one part.
std::pair<Tensor, Tensor> cfws_split(const Tensor& w);

CFWSWeights cfws_quantize(const Tensor& w, int bits);

Tensor cfws_dequantize(const CFWSWeights& c);

// Runs the two integer paths explicitly: a 3x3 convolution with the fine
// codes plus a 1x1 convolution with the coarse codes aligned to the kernel
// center, then the bias.
Tensor cfws_conv(const Tensor& x, const CFWSWeights& c,
                 std::span<const float> bias, int stride, int pad);

} // namespace repq
