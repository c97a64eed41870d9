#include "repq/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "repq/rng.hpp"

namespace repq {

void ArchSpec::validate() const {
    if (input_channels <= 0 || input_height <= 0 || input_width <= 0) {
        throw ArgumentError("architecture input dimensions must be positive");
    }
    if (widths.empty()) throw ArgumentError("architecture needs at least one block");
    if (strides.size() != widths.size()) {
        throw ArgumentError("architecture has " + std::to_string(widths.size()) +
                            " widths but " + std::to_string(strides.size()) + " strides");
    }
    for (int w : widths) {
        if (w <= 0) throw ArgumentError("block widths must be positive");
    }
    for (int s : strides) {
        if (s < 1) throw ArgumentError("block strides must be at least 1");
    }
    if (classes < 2) throw ArgumentError("architecture needs at least 2 classes");
    if (center_dominant && widths[0] * input_channels < 2) {
        throw ArgumentError("center-dominant construction needs more than one kernel center");
    }
}

ArchSpec reference_arch() {
    ArchSpec spec;
    spec.input_channels = 3;
    spec.input_height = 16;
    spec.input_width = 16;
    spec.widths = {16, 16, 32, 32};
    spec.strides = {1, 1, 2, 1};
    spec.classes = 8;
    spec.center_dominant = true;
    return spec;
}

namespace {

BatchNormParams random_bn(SeededRng& rng, int channels, double gamma_lo, double gamma_hi) {
    BatchNormParams bn;
    const std::size_t c = static_cast<std::size_t>(channels);
    bn.gamma.resize(c);
    bn.beta.resize(c);
    bn.running_mean.resize(c);
    bn.running_var.resize(c);
    bn.epsilon = 1e-5f;
    for (std::size_t i = 0; i < c; ++i) {
        bn.gamma[i] = static_cast<float>(rng.uniform(gamma_lo, gamma_hi));
        bn.beta[i] = static_cast<float>(rng.gaussian(0.0, 0.05));
        bn.running_mean[i] = static_cast<float>(rng.gaussian(0.0, 0.05));
        bn.running_var[i] = static_cast<float>(rng.uniform(0.5, 1.5));
    }
    return bn;
}

double bn_scale(const BatchNormParams& bn, int channel) {
    const std::size_t c = static_cast<std::size_t>(channel);
    return static_cast<double>(bn.gamma[c]) /
           std::sqrt(static_cast<double>(bn.running_var[c]) + static_cast<double>(bn.epsilon));
}

// Rewrites the 1x1 branch so the fused kernel's center values span a range
// that strictly contains, and is several times wider than, the surround
// range. Works backward from target center values: whatever the folded 3x3
// branch and the identity branch put at the center, the 1x1 branch supplies
// the difference.
void shape_center_dominant(RepBlock& b, SeededRng& rng) {
    const int o = b.out_channels();
    const int ic = b.in_channels();

    double surround_amp = 0.0;
    for (int oc = 0; oc < o; ++oc) {
        const double s3 = bn_scale(b.branch3x3.bn, oc);
        for (int c = 0; c < ic; ++c) {
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    if (ky == 1 && kx == 1) continue;
                    const double v = std::fabs(static_cast<double>(b.branch3x3.weight.at(oc, c, ky, kx)) * s3);
                    surround_amp = std::max(surround_amp, v);
                }
            }
        }
    }
    surround_amp = std::max(surround_amp, 1e-3);

    // Center targets: wider than the surround everywhere, with both extremes
    // pinned so containment is strict on both sides.
    std::vector<double> targets(static_cast<std::size_t>(o) * static_cast<std::size_t>(ic));
    for (double& t : targets) t = rng.gaussian(0.0, 1.5 * surround_amp);
    targets.front() = 3.0 * surround_amp;
    targets.back() = -3.0 * surround_amp;

    for (int oc = 0; oc < o; ++oc) {
        const double s3 = bn_scale(b.branch3x3.bn, oc);
        const double s1 = bn_scale(b.branch1x1->bn, oc);
        const double sid = b.branch_id ? bn_scale(*b.branch_id, oc) : 0.0;
        for (int c = 0; c < ic; ++c) {
            const double fused_from_3x3 = static_cast<double>(b.branch3x3.weight.at(oc, c, 1, 1)) * s3;
            const double fused_from_id = (oc == c) ? sid : 0.0;
            const double want = targets[static_cast<std::size_t>(oc) * static_cast<std::size_t>(ic) +
                                        static_cast<std::size_t>(c)];
            b.branch1x1->weight.at(oc, c, 0, 0) =
                static_cast<float>((want - fused_from_3x3 - fused_from_id) / s1);
        }
    }
}

// Per-channel mean and standard deviation of a captured pre-ReLU activation.
struct ChannelStats {
    std::vector<double> mean, stddev;
};

ChannelStats channel_stats(const Tensor& a) {
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    const double per = static_cast<double>(n) * h * w;
    ChannelStats s;
    s.mean.assign(static_cast<std::size_t>(c), 0.0);
    s.stddev.assign(static_cast<std::size_t>(c), 0.0);
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    s.mean[static_cast<std::size_t>(ci)] += a.at(ni, ci, y, x);
                }
            }
        }
    }
    for (double& v : s.mean) v /= per;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const double d = a.at(ni, ci, y, x) - s.mean[static_cast<std::size_t>(ci)];
                    s.stddev[static_cast<std::size_t>(ci)] += d * d;
                }
            }
        }
    }
    for (double& v : s.stddev) v = std::sqrt(v / per);
    return s;
}

// Adds a per-channel offset to whatever produces the block's bias: the 3x3
// branch's batch-norm shift, or the bias vector of an already-fused conv.
void shift_channel(RepModel::Layer& layer, int channel, double delta) {
    if (auto* b = std::get_if<RepBlock>(&layer)) {
        float& be = b->branch3x3.bn.beta[static_cast<std::size_t>(channel)];
        be = static_cast<float>(static_cast<double>(be) + delta);
    } else {
        float& bi = std::get<FusedConv>(layer).bias[static_cast<std::size_t>(channel)];
        bi = static_cast<float>(static_cast<double>(bi) + delta);
    }
}

// Gives each block the activation statistics the rest of the toolkit banks
// on. Two adjustments per layer, both folding exactly into the fused form:
//   1. The widest 40% of channels get their mean pulled below zero: the
//      single widest down to -8 of its own spread (the ReLU almost never
//      lets it through), the rest to -1.8 (rarely-firing channels). The
//      pre-ReLU magnitudes then run far past anything that survives the
//      ReLU, the shape trained networks show.
//   2. Every branch's gamma and beta are scaled so the block's pre-ReLU
//      output has unit RMS on a probe batch. Scaling all branches by the
//      same factor keeps fusion equivalence and center dominance intact.
void shape_activations(RepModel& m, std::uint64_t probe_seed) {
    SeededRng rng(probe_seed);
    Tensor probe(Layout::ActNCHW, {8, m.input_channels, m.input_height, m.input_width});
    rng.fill_gaussian(probe.values(), 0.0, 1.0);

    for (int i = 0; i < m.layer_count(); ++i) {
        auto& layer = m.layers[static_cast<std::size_t>(i)];
        {
            const ForwardResult r = forward(m, probe, {i});
            const ChannelStats st = channel_stats(r.captured.at(i));
            const int c = static_cast<int>(st.mean.size());

            std::vector<int> by_width(static_cast<std::size_t>(c));
            for (int ci = 0; ci < c; ++ci) by_width[static_cast<std::size_t>(ci)] = ci;
            std::sort(by_width.begin(), by_width.end(), [&st](int a, int b) {
                return st.stddev[static_cast<std::size_t>(a)] > st.stddev[static_cast<std::size_t>(b)];
            });
            const int shifted = (c * 2) / 5;
            for (int k = 0; k < shifted; ++k) {
                const int ci = by_width[static_cast<std::size_t>(k)];
                const double depth = (k == 0) ? 8.0 : 1.8;
                const double target = -depth * st.stddev[static_cast<std::size_t>(ci)];
                shift_channel(layer, ci, target - st.mean[static_cast<std::size_t>(ci)]);
            }
        }

        const ForwardResult r = forward(m, probe, {i});
        const Tensor& a = r.captured.at(i);
        double sq = 0.0;
        for (float v : a.values()) sq += static_cast<double>(v) * static_cast<double>(v);
        const double rms = std::sqrt(sq / static_cast<double>(a.size()));
        if (rms <= 1e-8) continue;
        const double lam = 1.0 / rms;

        auto scale_bn = [lam](BatchNormParams& bn) {
            for (float& g : bn.gamma) g = static_cast<float>(static_cast<double>(g) * lam);
            for (float& be : bn.beta) be = static_cast<float>(static_cast<double>(be) * lam);
        };
        if (auto* b = std::get_if<RepBlock>(&layer)) {
            scale_bn(b->branch3x3.bn);
            if (b->branch1x1) scale_bn(b->branch1x1->bn);
            if (b->branch_id) scale_bn(*b->branch_id);
        } else {
            auto& f = std::get<FusedConv>(layer);
            for (float& v : f.weight.values()) v = static_cast<float>(static_cast<double>(v) * lam);
            for (float& v : f.bias) v = static_cast<float>(static_cast<double>(v) * lam);
        }
    }
}

} // namespace

RepModel generate_model(const ArchSpec& spec, std::uint64_t seed) {
    spec.validate();
    SeededRng rng(seed);

    RepModel m;
    m.input_channels = spec.input_channels;
    m.input_height = spec.input_height;
    m.input_width = spec.input_width;

    int in_c = spec.input_channels;
    for (std::size_t k = 0; k < spec.widths.size(); ++k) {
        const int out_c = spec.widths[k];
        const int stride = spec.strides[k];

        RepBlock b;
        b.stride = stride;
        b.branch3x3.weight = Tensor(Layout::WgtOIHW, {out_c, in_c, 3, 3});
        rng.fill_gaussian(b.branch3x3.weight.values(), 0.0,
                          std::sqrt(2.0 / (9.0 * static_cast<double>(in_c))));
        b.branch3x3.bn = random_bn(rng, out_c, 0.9, 1.1);

        ConvBranch side;
        side.weight = Tensor(Layout::WgtOIHW, {out_c, in_c, 1, 1});
        rng.fill_gaussian(side.weight.values(), 0.0,
                          0.5 * std::sqrt(2.0 / static_cast<double>(in_c)));
        side.bn = random_bn(rng, out_c, 0.9, 1.1);
        b.branch1x1 = std::move(side);

        if (stride == 1 && out_c == in_c) {
            b.branch_id = random_bn(rng, out_c, 0.5, 1.0);
        }

        if (spec.center_dominant) shape_center_dominant(b, rng);

        m.layers.emplace_back(std::move(b));
        in_c = out_c;
    }

    GapLinearHead head;
    head.classes = spec.classes;
    head.features = in_c;
    head.weight.resize(static_cast<std::size_t>(spec.classes) * static_cast<std::size_t>(in_c));
    head.bias.resize(static_cast<std::size_t>(spec.classes));
    rng.fill_gaussian(head.weight, 0.0, 1.0 / std::sqrt(static_cast<double>(in_c)));
    rng.fill_gaussian(head.bias, 0.0, 0.02);
    m.head = std::move(head);

    shape_activations(m, seed ^ 0x9e3779b97f4a7c15ULL);
    m.validate();
    return m;
}

SampleSet generate_samples(const RepModel& m, int count, std::uint64_t seed,
                           bool label_with_model) {
    if (count < 1) throw ArgumentError("sample generation needs a positive count");
    m.validate();
    SeededRng rng(seed);

    SampleSet s;
    s.batch = Tensor(Layout::ActNCHW, {count, m.input_channels, m.input_height, m.input_width});
    rng.fill_gaussian(s.batch.values(), 0.0, 1.0);
    if (label_with_model) {
        s.labels = forward(m, s.batch).argmax();
    }
    return s;
}

} // namespace repq
