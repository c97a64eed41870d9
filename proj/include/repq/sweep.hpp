#pragma once

#include <span>
#include <vector>

#include "repq/model.hpp"
#include "repq/model_io.hpp"

namespace repq {

enum class SweepTarget { Weight, Activation };

const char* to_string(SweepTarget t);
SweepTarget sweep_target_from_string(const std::string& s);

// Result of clipping one layer at a range of thresholds. For each alpha the
// layer's weights (or pre-ReLU activations) are clipped to
// [-alpha * max_abs, alpha * max_abs] and the network output is compared to
// the unclipped run.
struct SweepCurve {
    SweepTarget target = SweepTarget::Weight;
    int layer = 0;
    std::vector<float> alphas;           // strictly decreasing, in (0, 1]
    std::vector<float> cosine;           // logit cosine similarity vs unclipped
    std::vector<float> clipped_fraction; // share of values the clip altered
    std::vector<float> top1_agreement;   // empty when the sample set is unlabeled
};

// alpha grid 1.00, 0.95, ... 0.05
std::vector<float> default_alpha_grid();

SweepCurve clip_sweep(const RepModel& m, const SampleSet& samples,
                      SweepTarget target, int layer,
                      std::span<const float> alphas);

} // namespace repq
