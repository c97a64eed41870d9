#include "repq/quant.hpp"

#include <algorithm>
#include <string>

#include "repq/errors.hpp"

namespace repq {

void QuantParams::validate() const {
    if (bits < 2 || bits > 32) {
        throw ArgumentError("quantizer bit depth must be between 2 and 32, got " + std::to_string(bits));
    }
    if (!(scale > 0.0f) || !std::isfinite(scale)) {
        throw ArgumentError("quantizer scale must be positive and finite");
    }
}

std::vector<std::int32_t> quantize(std::span<const float> x, const QuantParams& p) {
    p.validate();
    const double s = p.scale;
    const double lo = static_cast<double>(p.qmin());
    const double hi = static_cast<double>(p.qmax());

    std::vector<std::int32_t> q(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const float v = x[i];
        if (!std::isfinite(v)) {
            throw NumericError("quantize: non-finite value at index " + std::to_string(i));
        }
        const double r = std::clamp(round_half_even(static_cast<double>(v) / s), lo, hi);
        q[i] = static_cast<std::int32_t>(r);
    }
    return q;
}

std::vector<float> dequantize(std::span<const std::int32_t> q, const QuantParams& p) {
    p.validate();
    const std::int64_t lo = p.qmin();
    const std::int64_t hi = p.qmax();
    const double s = p.scale;

    std::vector<float> x(q.size());
    for (std::size_t i = 0; i < q.size(); ++i) {
        if (q[i] < lo || q[i] > hi) {
            throw ArgumentError("dequantize: code " + std::to_string(q[i]) +
                                " outside the " + std::to_string(p.bits) + "-bit range");
        }
        x[i] = static_cast<float>(static_cast<double>(q[i]) * s);
    }
    return x;
}

QuantParams minmax_scale(std::span<const float> x, int bits) {
    if (x.empty()) throw ArgumentError("minmax_scale: empty input");
    if (bits < 2 || bits > 32) {
        throw ArgumentError("minmax_scale: bit depth must be between 2 and 32");
    }

    double m = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!std::isfinite(x[i])) {
            throw NumericError("minmax_scale: non-finite value at index " + std::to_string(i));
        }
        m = std::max(m, std::fabs(static_cast<double>(x[i])));
    }
    if (m == 0.0) return {kDegenerateScale, bits};

    const double levels = static_cast<double>((std::int64_t{1} << (bits - 1)) - 1);
    return {static_cast<float>(m / levels), bits};
}

std::vector<float> fake_quantize(std::span<const float> x, const QuantParams& p) {
    return dequantize(quantize(x, p), p);
}

Tensor fake_quantize(const Tensor& x, const QuantParams& p) {
    return Tensor::from_data(x.layout(), x.dims(), fake_quantize(x.values(), p));
}

} // namespace repq
