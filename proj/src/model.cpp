#include "repq/model.hpp"

#include <algorithm>
#include <string>

namespace repq {

void GapLinearHead::validate() const {
    if (classes <= 0 || features <= 0) {
        throw StructuralError("classifier head needs positive class and feature counts");
    }
    if (weight.size() != static_cast<std::size_t>(classes) * static_cast<std::size_t>(features)) {
        throw StructuralError("classifier head weight size does not match classes x features");
    }
    if (bias.size() != static_cast<std::size_t>(classes)) {
        throw StructuralError("classifier head bias size does not match classes");
    }
}

bool RepModel::fully_fused() const {
    for (const auto& l : layers) {
        if (std::holds_alternative<RepBlock>(l)) return false;
    }
    return true;
}

int RepModel::layer_out_channels(int idx) const {
    const auto& l = layers[static_cast<std::size_t>(idx)];
    if (const auto* f = std::get_if<FusedConv>(&l)) return f->weight.dim(0);
    return std::get<RepBlock>(l).out_channels();
}

int RepModel::layer_in_channels(int idx) const {
    const auto& l = layers[static_cast<std::size_t>(idx)];
    if (const auto* f = std::get_if<FusedConv>(&l)) return f->weight.dim(1);
    return std::get<RepBlock>(l).in_channels();
}

int RepModel::layer_stride(int idx) const {
    const auto& l = layers[static_cast<std::size_t>(idx)];
    if (const auto* f = std::get_if<FusedConv>(&l)) return f->stride;
    return std::get<RepBlock>(l).stride;
}

int RepModel::logit_dim() const {
    if (head) return head->classes;
    if (layers.empty()) return input_channels;
    return layer_out_channels(layer_count() - 1);
}

void RepModel::validate() const {
    if (input_channels <= 0 || input_height <= 0 || input_width <= 0) {
        throw StructuralError("model input dimensions must be positive");
    }
    if (layers.empty()) throw StructuralError("model has no layers");

    int channels = input_channels;
    for (int i = 0; i < layer_count(); ++i) {
        const auto& l = layers[static_cast<std::size_t>(i)];
        if (const auto* f = std::get_if<FusedConv>(&l)) {
            if (f->weight.layout() != Layout::WgtOIHW || f->weight.dim(2) != 3 || f->weight.dim(3) != 3) {
                throw StructuralError("layer " + std::to_string(i) + ": fused kernel must be OIHW 3x3");
            }
            if (f->bias.size() != static_cast<std::size_t>(f->weight.dim(0))) {
                throw StructuralError("layer " + std::to_string(i) + ": bias does not match output channels");
            }
            if (f->stride < 1) throw StructuralError("layer " + std::to_string(i) + ": stride must be at least 1");
        } else {
            std::get<RepBlock>(l).validate();
        }
        if (layer_in_channels(i) != channels) {
            throw StructuralError("layer " + std::to_string(i) + " expects " +
                                  std::to_string(layer_in_channels(i)) + " input channels, previous layer provides " +
                                  std::to_string(channels));
        }
        channels = layer_out_channels(i);
    }

    if (head) {
        head->validate();
        if (head->features != channels) {
            throw StructuralError("classifier head expects " + std::to_string(head->features) +
                                  " features, final layer provides " + std::to_string(channels));
        }
    }
}

std::span<const float> ForwardResult::sample_logits(int n) const {
    return std::span<const float>(logits).subspan(
        static_cast<std::size_t>(n) * static_cast<std::size_t>(logit_dim),
        static_cast<std::size_t>(logit_dim));
}

std::vector<int> ForwardResult::argmax() const {
    std::vector<int> out(static_cast<std::size_t>(batch));
    for (int n = 0; n < batch; ++n) {
        const auto s = sample_logits(n);
        out[static_cast<std::size_t>(n)] =
            static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
    }
    return out;
}

namespace {

Tensor clip_tensor(const Tensor& t, float bound) {
    Tensor y = t;
    for (float& v : y.values()) v = std::clamp(v, -bound, bound);
    return y;
}

} // namespace

ForwardResult forward(const RepModel& m, const Tensor& x,
                      const std::set<int>& capture,
                      const std::optional<LayerClip>& act_clip) {
    m.validate();
    if (x.layout() != Layout::ActNCHW) throw ShapeError("forward: input must be an NCHW activation tensor");
    if (x.dim(1) != m.input_channels || x.dim(2) != m.input_height || x.dim(3) != m.input_width) {
        throw ShapeError("forward: input is " + std::to_string(x.dim(1)) + "x" +
                         std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                         ", model expects " + std::to_string(m.input_channels) + "x" +
                         std::to_string(m.input_height) + "x" + std::to_string(m.input_width));
    }
    for (int idx : capture) {
        if (idx < 0 || idx >= m.layer_count()) {
            throw ArgumentError("forward: capture index " + std::to_string(idx) + " out of range");
        }
    }
    if (act_clip && (act_clip->layer < 0 || act_clip->layer >= m.layer_count())) {
        throw ArgumentError("forward: clip layer out of range");
    }

    std::map<int, Tensor> captured;
    Tensor cur = x;
    for (int i = 0; i < m.layer_count(); ++i) {
        const auto& l = m.layers[static_cast<std::size_t>(i)];
        Tensor y;
        bool with_relu = true;
        if (const auto* f = std::get_if<FusedConv>(&l)) {
            y = conv2d(cur, f->weight, f->bias, f->stride, 1);
            with_relu = f->followed_by_relu;
        } else {
            y = repblock_forward(std::get<RepBlock>(l), cur);
        }
        if (act_clip && act_clip->layer == i) y = clip_tensor(y, act_clip->bound);
        if (capture.count(i)) captured[i] = y;
        cur = with_relu ? relu(y) : std::move(y);
    }

    ForwardResult r = pool_and_classify(cur, m.head);
    r.captured = std::move(captured);
    return r;
}

ForwardResult pool_and_classify(const Tensor& final_act,
                                const std::optional<GapLinearHead>& head) {
    const int n = final_act.dim(0), c = final_act.dim(1);
    const std::size_t plane = static_cast<std::size_t>(final_act.dim(2)) *
                              static_cast<std::size_t>(final_act.dim(3));
    if (head) {
        head->validate();
        if (head->features != c) {
            throw StructuralError("classifier head expects " + std::to_string(head->features) +
                                  " features, activations provide " + std::to_string(c));
        }
    }

    std::vector<double> pooled(static_cast<std::size_t>(n) * static_cast<std::size_t>(c));
    for (int in = 0; in < n; ++in) {
        for (int ic = 0; ic < c; ++ic) {
            const float* p = final_act.data() + final_act.flat(in, ic, 0, 0);
            double acc = 0.0;
            for (std::size_t k = 0; k < plane; ++k) acc += static_cast<double>(p[k]);
            pooled[static_cast<std::size_t>(in) * c + ic] = acc / static_cast<double>(plane);
        }
    }

    ForwardResult r;
    r.batch = n;
    r.logit_dim = head ? head->classes : c;
    r.logits.resize(static_cast<std::size_t>(n) * static_cast<std::size_t>(r.logit_dim));
    if (head) {
        const GapLinearHead& h = *head;
        for (int in = 0; in < n; ++in) {
            for (int cls = 0; cls < h.classes; ++cls) {
                double acc = h.bias[static_cast<std::size_t>(cls)];
                const float* wrow = h.weight.data() + static_cast<std::size_t>(cls) * h.features;
                const double* feat = pooled.data() + static_cast<std::size_t>(in) * c;
                for (int f = 0; f < h.features; ++f) {
                    acc += static_cast<double>(wrow[f]) * feat[f];
                }
                r.logits[static_cast<std::size_t>(in) * h.classes + cls] = static_cast<float>(acc);
            }
        }
    } else {
        for (std::size_t i = 0; i < pooled.size(); ++i) {
            r.logits[i] = static_cast<float>(pooled[i]);
        }
    }
    return r;
}

} // namespace repq
