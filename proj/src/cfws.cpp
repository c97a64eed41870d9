#include "repq/cfws.hpp"

#include <string>

#include "repq/errors.hpp"

namespace repq {

namespace {

void require_3x3(const Tensor& w, const char* where) {
    if (w.layout() != Layout::WgtOIHW) {
        throw ShapeError(std::string(where) + ": kernel must be an OIHW weight tensor");
    }
    if (w.dim(2) != 3 || w.dim(3) != 3) {
        throw ShapeError(std::string(where) + ": kernel must be 3x3, got " +
                         std::to_string(w.dim(2)) + "x" + std::to_string(w.dim(3)));
    }
}

} // namespace

void CFWSWeights::validate() const {
    if (out_channels <= 0 || in_channels <= 0) {
        throw ShapeError("cfws weights have non-positive channel counts");
    }
    const std::size_t oi = static_cast<std::size_t>(out_channels) * static_cast<std::size_t>(in_channels);
    if (coarse.size() != oi || fine.size() != oi * 9) {
        throw ShapeError("cfws code arrays do not match the channel counts");
    }
    QuantParams{coarse_scale, bits}.validate();
    QuantParams{fine_scale, bits}.validate();
    const std::int64_t lo = QuantParams{1.0f, bits}.qmin();
    const std::int64_t hi = QuantParams{1.0f, bits}.qmax();
    for (std::int32_t c : coarse) {
        if (c < lo || c > hi) throw NumericError("cfws coarse code outside the bit range");
    }
    for (std::int32_t c : fine) {
        if (c < lo || c > hi) throw NumericError("cfws fine code outside the bit range");
    }
}

std::pair<Tensor, Tensor> cfws_split(const Tensor& w) {
    require_3x3(w, "cfws_split");
    const int o = w.dim(0), i = w.dim(1);

    Tensor center(Layout::WgtOIHW, {o, i, 1, 1});
    Tensor surround = w;
    for (int oc = 0; oc < o; ++oc) {
        for (int ic = 0; ic < i; ++ic) {
            center.at(oc, ic, 0, 0) = w.at(oc, ic, 1, 1);
            surround.at(oc, ic, 1, 1) = 0.0f;
        }
    }
    return {std::move(center), std::move(surround)};
}

CFWSWeights cfws_quantize(const Tensor& w, int bits) {
    require_3x3(w, "cfws_quantize");
    const int o = w.dim(0), i = w.dim(1);
    const std::size_t oi = static_cast<std::size_t>(o) * static_cast<std::size_t>(i);

    std::vector<float> centers(oi);
    for (int oc = 0; oc < o; ++oc) {
        for (int ic = 0; ic < i; ++ic) {
            centers[static_cast<std::size_t>(oc) * i + ic] = w.at(oc, ic, 1, 1);
        }
    }

    CFWSWeights c;
    c.out_channels = o;
    c.in_channels = i;
    c.bits = bits;

    const QuantParams coarse_p = minmax_scale(centers, bits);
    c.coarse_scale = coarse_p.scale;
    c.coarse = quantize(centers, coarse_p);

    // Replace each center with its coarse rounding residual, then treat the
    // whole kernel as one tensor for the fine scale.
    const std::vector<float> coarse_deq = dequantize(c.coarse, coarse_p);
    Tensor merged = w;
    for (int oc = 0; oc < o; ++oc) {
        for (int ic = 0; ic < i; ++ic) {
            const std::size_t k = static_cast<std::size_t>(oc) * i + ic;
            merged.at(oc, ic, 1, 1) = centers[k] - coarse_deq[k];
        }
    }

    const QuantParams fine_p = minmax_scale(merged.values(), bits);
    c.fine_scale = fine_p.scale;
    c.fine = quantize(merged.values(), fine_p);
    return c;
}

Tensor cfws_dequantize(const CFWSWeights& c) {
    c.validate();
    const QuantParams fine_p{c.fine_scale, c.bits};
    const QuantParams coarse_p{c.coarse_scale, c.bits};

    Tensor w = Tensor::from_data(Layout::WgtOIHW, {c.out_channels, c.in_channels, 3, 3},
                                 dequantize(c.fine, fine_p));
    const std::vector<float> coarse_deq = dequantize(c.coarse, coarse_p);
    for (int oc = 0; oc < c.out_channels; ++oc) {
        for (int ic = 0; ic < c.in_channels; ++ic) {
            w.at(oc, ic, 1, 1) += coarse_deq[static_cast<std::size_t>(oc) * c.in_channels + ic];
        }
    }
    return w;
}

Tensor cfws_conv(const Tensor& x, const CFWSWeights& c,
                 std::span<const float> bias, int stride, int pad) {
    c.validate();
    if (!bias.empty() && static_cast<int>(bias.size()) != c.out_channels) {
        throw ShapeError("cfws_conv: bias length does not match output channels");
    }

    const QuantParams fine_p{c.fine_scale, c.bits};
    const Tensor fine_w = Tensor::from_data(
        Layout::WgtOIHW, {c.out_channels, c.in_channels, 3, 3}, dequantize(c.fine, fine_p));
    Tensor y = conv2d(x, fine_w, {}, stride, pad);

    // The coarse codes act as a 1x1 kernel applied where the 3x3 center
    // lands: input position (out * stride - pad + 1).
    const std::vector<float> coarse_deq = dequantize(c.coarse, QuantParams{c.coarse_scale, c.bits});
    const int n = x.dim(0), h = x.dim(2), iw = x.dim(3);
    const int oh = y.dim(2), ow = y.dim(3);
    for (int in = 0; in < n; ++in) {
        for (int oc = 0; oc < c.out_channels; ++oc) {
            const double b = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<std::size_t>(oc)]);
            for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride - pad + 1;
                for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride - pad + 1;
                    double acc = b;
                    if (iy >= 0 && iy < h && ix >= 0 && ix < iw) {
                        for (int ic = 0; ic < c.in_channels; ++ic) {
                            acc += static_cast<double>(x.at(in, ic, iy, ix)) *
                                   static_cast<double>(coarse_deq[static_cast<std::size_t>(oc) * c.in_channels + ic]);
                        }
                    }
                    y.at(in, oc, oy, ox) += static_cast<float>(acc);
                }
            }
        }
    }
    return y;
}

} // namespace repq
