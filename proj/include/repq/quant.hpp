#pragma once

#include <cfenv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "repq/tensor.hpp"

namespace repq {

// Symmetric uniform quantizer: q = clip(round(x / scale), qmin, qmax) with
// qmin = -2^(bits-1) and qmax = 2^(bits-1) - 1.
struct QuantParams {
    float scale = 1.0f;
    int bits = 8;

    std::int64_t qmin() const { return -(std::int64_t{1} << (bits - 1)); }
    std::int64_t qmax() const { return (std::int64_t{1} << (bits - 1)) - 1; }
    void validate() const;
};

// Scale assigned to all-zero tensors so that dequantization stays exact and
// downstream divisions stay finite.
inline constexpr float kDegenerateScale = std::numeric_limits<float>::min();

// Round half to even. Every quantizer rounds through this single function;
// it relies on the default floating point environment (round to nearest).
inline double round_half_even(double v) { return std::nearbyint(v); }

std::vector<std::int32_t> quantize(std::span<const float> x, const QuantParams& p);
std::vector<float> dequantize(std::span<const std::int32_t> q, const QuantParams& p);

// scale = max|x| / (2^(bits-1) - 1)
QuantParams minmax_scale(std::span<const float> x, int bits);

// quantize immediately followed by dequantize, the simulated-quantization view
// of a tensor.
std::vector<float> fake_quantize(std::span<const float> x, const QuantParams& p);
Tensor fake_quantize(const Tensor& x, const QuantParams& p);

} // namespace repq
