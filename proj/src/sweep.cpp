#include "repq/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "repq/report.hpp"

namespace repq {

const char* to_string(SweepTarget t) {
    return t == SweepTarget::Weight ? "weight" : "activation";
}

SweepTarget sweep_target_from_string(const std::string& s) {
    if (s == "weight") return SweepTarget::Weight;
    if (s == "activation") return SweepTarget::Activation;
    throw ArgumentError("unknown sweep target '" + s + "' (expected weight or activation)");
}

std::vector<float> default_alpha_grid() {
    std::vector<float> a;
    for (int i = 20; i >= 1; --i) {
        a.push_back(static_cast<float>(i) / 20.0f);
    }
    return a;
}

namespace {

void check_alphas(std::span<const float> alphas) {
    if (alphas.empty()) throw ArgumentError("clip sweep needs at least one alpha");
    float prev = 2.0f;
    for (float a : alphas) {
        if (!(a > 0.0f) || a > 1.0f) {
            throw ArgumentError("sweep alphas must lie in (0, 1]");
        }
        if (a >= prev) throw ArgumentError("sweep alphas must be strictly decreasing");
        prev = a;
    }
}

float top1_agreement(const ForwardResult& r, std::span<const int> labels) {
    const std::vector<int> top = r.argmax();
    int hits = 0;
    for (std::size_t i = 0; i < top.size(); ++i) {
        if (top[i] == labels[i]) ++hits;
    }
    return static_cast<float>(hits) / static_cast<float>(top.size());
}

} // namespace

SweepCurve clip_sweep(const RepModel& m, const SampleSet& samples,
                      SweepTarget target, int layer,
                      std::span<const float> alphas) {
    m.validate();
    if (!m.fully_fused()) {
        throw StructuralError("clip sweep requires a fused model; run the fuse step first");
    }
    if (layer < 0 || layer >= m.layer_count()) {
        throw ArgumentError("clip sweep layer " + std::to_string(layer) + " out of range");
    }
    if (samples.count() == 0) throw ArgumentError("clip sweep needs samples");
    check_alphas(alphas);

    SweepCurve curve;
    curve.target = target;
    curve.layer = layer;

    const ForwardResult baseline = forward(m, samples.batch, {layer});
    const Tensor& base_act = baseline.captured.at(layer);
    const FusedConv& conv = std::get<FusedConv>(m.layers[static_cast<std::size_t>(layer)]);
    const float max_mag = target == SweepTarget::Weight ? conv.weight.max_abs()
                                                        : base_act.max_abs();

    for (float alpha : alphas) {
        const float bound = alpha * max_mag;

        ForwardResult run;
        std::size_t altered = 0;
        std::size_t denom = 1;
        if (target == SweepTarget::Weight) {
            RepModel clipped = m;
            FusedConv& c = std::get<FusedConv>(clipped.layers[static_cast<std::size_t>(layer)]);
            for (float& v : c.weight.values()) {
                if (std::fabs(v) > bound) {
                    v = std::clamp(v, -bound, bound);
                    ++altered;
                }
            }
            denom = c.weight.size();
            run = forward(clipped, samples.batch);
        } else {
            for (float v : base_act.values()) {
                if (std::fabs(v) > bound) ++altered;
            }
            denom = base_act.size();
            run = forward(m, samples.batch, {}, LayerClip{layer, bound});
        }

        curve.alphas.push_back(alpha);
        curve.cosine.push_back(cosine_similarity(baseline.logits, run.logits));
        curve.clipped_fraction.push_back(static_cast<float>(static_cast<double>(altered) /
                                                            static_cast<double>(denom)));
        if (samples.labeled()) {
            curve.top1_agreement.push_back(top1_agreement(run, samples.labels));
        }
    }
    return curve;
}

} // namespace repq
