#include "repq/tensor.hpp"

#include <cmath>
#include <string>

namespace repq {

namespace {

std::size_t checked_volume(const std::array<int, 4>& dims) {
    std::size_t v = 1;
    for (int d : dims) {
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + std::to_string(d));
        v *= static_cast<std::size_t>(d);
    }
    return v;
}

} // namespace

Tensor::Tensor(Layout layout, const std::array<int, 4>& dims)
    : layout_(layout), dims_(dims), data_(checked_volume(dims), 0.0f) {}

Tensor Tensor::from_data(Layout layout, const std::array<int, 4>& dims,
                         std::vector<float> data) {
    const std::size_t v = checked_volume(dims);
    if (data.size() != v) {
        throw ShapeError("tensor data has " + std::to_string(data.size()) +
                         " values, dimensions require " + std::to_string(v));
    }
    Tensor t;
    t.layout_ = layout;
    t.dims_ = dims;
    t.data_ = std::move(data);
    return t;
}

bool Tensor::all_finite() const {
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

float Tensor::max_abs() const {
    float m = 0.0f;
    for (float v : data_) m = std::max(m, std::fabs(v));
    return m;
}

void BatchNormParams::validate() const {
    const std::size_t c = gamma.size();
    if (c == 0) throw ShapeError("batch norm has no channels");
    if (beta.size() != c || running_mean.size() != c || running_var.size() != c) {
        throw ShapeError("batch norm parameter vectors differ in length");
    }
    if (!(epsilon >= 0.0f) || !std::isfinite(epsilon)) {
        throw ArgumentError("batch norm epsilon must be finite and non-negative");
    }
    for (float v : running_var) {
        if (!(v >= 0.0f)) throw NumericError("batch norm running variance must be non-negative");
    }
}

BatchNormParams BatchNormParams::identity(int channels) {
    BatchNormParams bn;
    bn.gamma.assign(static_cast<std::size_t>(channels), 1.0f);
    bn.beta.assign(static_cast<std::size_t>(channels), 0.0f);
    bn.running_mean.assign(static_cast<std::size_t>(channels), 0.0f);
    bn.running_var.assign(static_cast<std::size_t>(channels), 1.0f);
    return bn;
}

Tensor conv2d(const Tensor& x, const Tensor& w, std::span<const float> bias,
              int stride, int pad) {
    if (x.layout() != Layout::ActNCHW) throw ShapeError("conv2d: input must be an NCHW activation tensor");
    if (w.layout() != Layout::WgtOIHW) throw ShapeError("conv2d: kernel must be an OIHW weight tensor");
    if (stride < 1) throw ArgumentError("conv2d: stride must be at least 1");
    if (pad < 0) throw ArgumentError("conv2d: padding must be non-negative");

    const int n = x.dim(0), ci = x.dim(1), h = x.dim(2), iw = x.dim(3);
    const int o = w.dim(0), wi = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    if (ci != wi) {
        throw ShapeError("conv2d: input has " + std::to_string(ci) +
                         " channels, kernel expects " + std::to_string(wi));
    }
    if (!bias.empty() && static_cast<int>(bias.size()) != o) {
        throw ShapeError("conv2d: bias has " + std::to_string(bias.size()) +
                         " entries, kernel has " + std::to_string(o) + " output channels");
    }
    if (h + 2 * pad < kh || iw + 2 * pad < kw) {
        throw ShapeError("conv2d: kernel does not fit the padded input");
    }

    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (iw + 2 * pad - kw) / stride + 1;
    Tensor y(Layout::ActNCHW, {n, o, oh, ow});

    for (int in = 0; in < n; ++in) {
        for (int oc = 0; oc < o; ++oc) {
            const double b = bias.empty() ? 0.0 : static_cast<double>(bias[static_cast<std::size_t>(oc)]);
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = b;
                    for (int c = 0; c < ci; ++c) {
                        for (int ky = 0; ky < kh; ++ky) {
                            const int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                const int ix = ox * stride - pad + kx;
                                if (ix < 0 || ix >= iw) continue;
                                acc += static_cast<double>(x.at(in, c, iy, ix)) *
                                       static_cast<double>(w.at(oc, c, ky, kx));
                            }
                        }
                    }
                    y.at(in, oc, oy, ox) = static_cast<float>(acc);
                }
            }
        }
    }
    return y;
}

std::pair<Tensor, std::vector<float>> fold_bn(const Tensor& w,
                                              std::span<const float> bias,
                                              const BatchNormParams& bn) {
    if (w.layout() != Layout::WgtOIHW) throw ShapeError("fold_bn: kernel must be an OIHW weight tensor");
    bn.validate();
    const int o = w.dim(0);
    if (bn.channels() != o) {
        throw ShapeError("fold_bn: batch norm has " + std::to_string(bn.channels()) +
                         " channels, kernel has " + std::to_string(o) + " output channels");
    }
    if (!bias.empty() && static_cast<int>(bias.size()) != o) {
        throw ShapeError("fold_bn: bias length does not match output channels");
    }

    Tensor wf = w;
    std::vector<float> bf(static_cast<std::size_t>(o));
    const std::size_t per_channel = wf.size() / static_cast<std::size_t>(o);
    for (int oc = 0; oc < o; ++oc) {
        const std::size_t c = static_cast<std::size_t>(oc);
        const double scale = static_cast<double>(bn.gamma[c]) /
                             std::sqrt(static_cast<double>(bn.running_var[c]) +
                                       static_cast<double>(bn.epsilon));
        float* row = wf.data() + c * per_channel;
        for (std::size_t i = 0; i < per_channel; ++i) {
            row[i] = static_cast<float>(static_cast<double>(row[i]) * scale);
        }
        const double b0 = bias.empty() ? 0.0 : static_cast<double>(bias[c]);
        bf[c] = static_cast<float>((b0 - static_cast<double>(bn.running_mean[c])) * scale +
                                   static_cast<double>(bn.beta[c]));
    }
    return {std::move(wf), std::move(bf)};
}

Tensor apply_bn(const Tensor& x, const BatchNormParams& bn) {
    if (x.layout() != Layout::ActNCHW) throw ShapeError("apply_bn: input must be an NCHW activation tensor");
    bn.validate();
    if (bn.channels() != x.dim(1)) {
        throw ShapeError("apply_bn: batch norm has " + std::to_string(bn.channels()) +
                         " channels, input has " + std::to_string(x.dim(1)));
    }

    Tensor y = x;
    const int n = x.dim(0), c = x.dim(1);
    const std::size_t plane = static_cast<std::size_t>(x.dim(2)) * static_cast<std::size_t>(x.dim(3));
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const std::size_t ch = static_cast<std::size_t>(ic);
            const double scale = static_cast<double>(bn.gamma[ch]) /
                                 std::sqrt(static_cast<double>(bn.running_var[ch]) +
                                           static_cast<double>(bn.epsilon));
            const double mean = bn.running_mean[ch];
            const double beta = bn.beta[ch];
            float* p = y.data() + y.flat(in, ic, 0, 0);
            for (std::size_t i = 0; i < plane; ++i) {
                p[i] = static_cast<float>((static_cast<double>(p[i]) - mean) * scale + beta);
            }
        }
    }
    return y;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (float& v : y.values()) v = std::max(v, 0.0f);
    return y;
}

} // namespace repq
