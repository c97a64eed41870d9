#include "repq/calibrate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "repq/errors.hpp"

namespace repq {

const char* to_string(Metric m) {
    switch (m) {
        case Metric::MinMax: return "minmax";
        case Metric::Mse: return "mse";
        case Metric::Cosine: return "cosine";
        case Metric::KlNaive: return "kl";
        case Metric::KlTransformed: return "kl-transformed";
    }
    return "unknown";
}

Metric metric_from_string(const std::string& s) {
    if (s == "minmax") return Metric::MinMax;
    if (s == "mse") return Metric::Mse;
    if (s == "cosine") return Metric::Cosine;
    if (s == "kl") return Metric::KlNaive;
    if (s == "kl-transformed") return Metric::KlTransformed;
    throw ArgumentError("unknown calibration metric '" + s +
                        "' (expected minmax, mse, cosine, kl or kl-transformed)");
}

void CalibConfig::validate(int bits) const {
    if (bits < 2 || bits > 32) throw ArgumentError("calibration bit depth must be between 2 and 32");
    if (bins < 2) throw ArgumentError("calibration needs at least 2 histogram bins");
    const std::int64_t start = grid_start_bin > 0
                                   ? grid_start_bin
                                   : (std::int64_t{1} << (bits - 1));
    if (start >= bins) {
        throw ArgumentError("calibration histogram has " + std::to_string(bins) +
                            " bins, which is too few for the " + std::to_string(bits) +
                            "-bit candidate grid starting at bin " + std::to_string(start));
    }
    if (grid_start_bin < 0) throw ArgumentError("grid_start_bin must be non-negative");
    if (!(smoothing_eps > 0.0f)) throw ArgumentError("smoothing_eps must be positive");
    if (sample_count < 1) throw ArgumentError("sample_count must be at least 1");
}

namespace {

void check_distributions(std::span<const float> p, std::span<const float> q) {
    if (p.size() != q.size()) {
        throw ArgumentError("kl_divergence: distributions differ in length (" +
                            std::to_string(p.size()) + " vs " + std::to_string(q.size()) + ")");
    }
    if (p.empty()) throw ArgumentError("kl_divergence: empty distributions");
    double sp = 0.0, sq = 0.0;
    for (float v : p) sp += static_cast<double>(v);
    for (float v : q) sq += static_cast<double>(v);
    if (std::fabs(sp - 1.0) > 1e-6 || std::fabs(sq - 1.0) > 1e-6) {
        throw ArgumentError("kl_divergence: distributions must each sum to 1");
    }
}

} // namespace

float kl_divergence(std::span<const float> p, std::span<const float> q) {
    check_distributions(p, q);
    // sum p * (log p - log q): the two logs stay in a safe range even when
    // the ratio p / q itself would overflow or underflow float32.
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0f) {
            acc += static_cast<double>(p[i]) *
                   (static_cast<double>(std::log(p[i])) - static_cast<double>(std::log(q[i])));
        }
    }
    return static_cast<float>(acc);
}

float kl_divergence_naive(std::span<const float> p, std::span<const float> q) {
    check_distributions(p, q);
    // sum p * log(p / q) with the ratio formed in float32, matching the
    // textbook formula. Ratios beyond float range turn into inf here.
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0f) {
            acc += static_cast<double>(p[i]) * static_cast<double>(std::log(p[i] / q[i]));
        }
    }
    return static_cast<float>(acc);
}

namespace {

// Normalized histogram as double, dropping nothing.
std::vector<double> normalized_counts(const Histogram& h) {
    std::vector<double> p(h.counts.size());
    const double inv = 1.0 / static_cast<double>(h.total);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = static_cast<double>(h.counts[i]) * inv;
    }
    return p;
}

// Reference distribution for a clip threshold at bin t: everything at and
// beyond t is folded into bin t-1, then the vector is normalized.
std::vector<float> clip_distribution(const std::vector<double>& pnorm, int t) {
    std::vector<double> p(pnorm.begin(), pnorm.begin() + t);
    double tail = 0.0;
    for (std::size_t i = static_cast<std::size_t>(t); i < pnorm.size(); ++i) tail += pnorm[i];
    p[static_cast<std::size_t>(t) - 1] += tail;

    double sum = 0.0;
    for (double v : p) sum += v;
    std::vector<float> out(p.size());
    const double inv = sum > 0.0 ? 1.0 / sum : 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<float>(p[i] * inv);
    return out;
}

// Quantized counterpart: the kept bins are merged into `levels` equal spans
// (fractional bin edges weighted by overlap), and each span's mass is handed
// back only to the bins that held mass in the reference; bins that were empty
// stay empty. The result is smoothed and normalized.
std::vector<float> quantized_distribution(const std::vector<double>& pnorm, int t,
                                          int levels, double eps) {
    const double per_level = static_cast<double>(t) / static_cast<double>(levels);
    std::vector<double> q(static_cast<std::size_t>(t), 0.0);

    for (int j = 0; j < levels; ++j) {
        const double start = per_level * j;
        const double end = (j == levels - 1) ? static_cast<double>(t) : per_level * (j + 1);

        double mass = 0.0, occupied = 0.0;
        const int b0 = static_cast<int>(start);
        const int b1 = std::min(t, static_cast<int>(std::ceil(end)));
        for (int b = b0; b < b1; ++b) {
            const double overlap = std::min(end, static_cast<double>(b) + 1.0) -
                                   std::max(start, static_cast<double>(b));
            if (overlap <= 0.0) continue;
            const double pb = pnorm[static_cast<std::size_t>(b)];
            mass += overlap * pb;
            if (pb > 0.0) occupied += overlap;
        }
        if (occupied <= 0.0) continue;
        const double avg = mass / occupied;
        for (int b = b0; b < b1; ++b) {
            if (pnorm[static_cast<std::size_t>(b)] <= 0.0) continue;
            const double overlap = std::min(end, static_cast<double>(b) + 1.0) -
                                   std::max(start, static_cast<double>(b));
            if (overlap <= 0.0) continue;
            q[static_cast<std::size_t>(b)] += avg * overlap;
        }
    }

    double sum = 0.0;
    for (double& v : q) {
        v += eps;
        sum += v;
    }
    std::vector<float> out(q.size());
    const double inv = 1.0 / sum;
    for (std::size_t i = 0; i < q.size(); ++i) out[i] = static_cast<float>(q[i] * inv);
    return out;
}

// Distance between the histogram-weighted bin representatives and their
// clipped, quantized reconstructions for a given scale.
double reconstruction_mse(const Histogram& h, double scale, std::int64_t qmax) {
    double err = 0.0;
    for (int b = 0; b < h.bin_count; ++b) {
        const std::uint64_t c = h.counts[static_cast<std::size_t>(b)];
        if (c == 0) continue;
        const double v = (static_cast<double>(b) + 0.5) * static_cast<double>(h.bin_width);
        double code = round_half_even(v / scale);
        if (code > static_cast<double>(qmax)) code = static_cast<double>(qmax);
        const double r = code * scale;
        err += static_cast<double>(c) * (v - r) * (v - r);
    }
    return err / static_cast<double>(h.total);
}

double reconstruction_cosine_distance(const Histogram& h, double scale, std::int64_t qmax) {
    double dot = 0.0, nv = 0.0, nr = 0.0;
    for (int b = 0; b < h.bin_count; ++b) {
        const std::uint64_t c = h.counts[static_cast<std::size_t>(b)];
        if (c == 0) continue;
        const double v = (static_cast<double>(b) + 0.5) * static_cast<double>(h.bin_width);
        double code = round_half_even(v / scale);
        if (code > static_cast<double>(qmax)) code = static_cast<double>(qmax);
        const double r = code * scale;
        dot += static_cast<double>(c) * v * r;
        nv += static_cast<double>(c) * v * v;
        nr += static_cast<double>(c) * r * r;
    }
    if (nv <= 0.0 || nr <= 0.0) return 1.0;
    return 1.0 - dot / std::sqrt(nv * nr);
}

} // namespace

QuantParams search_scale(const Histogram& h, int bits, const CalibConfig& cfg) {
    h.validate();
    cfg.validate(bits);

    const std::int64_t levels = (std::int64_t{1} << (bits - 1)) - 1;
    if (h.degenerate()) return {kDegenerateScale, bits};
    if (cfg.metric == Metric::MinMax) {
        return {static_cast<float>(static_cast<double>(h.max_abs) / static_cast<double>(levels)), bits};
    }

    const std::vector<double> pnorm = normalized_counts(h);

    // The zero bin sits out of the divergence comparison. Code 0 represents
    // its values exactly at every candidate threshold, so it says nothing
    // about where to clip, yet after a ReLU it can hold most of the mass and
    // would drown out the bins that do carry rounding information.
    std::vector<double> pkl = pnorm;
    pkl[0] = 0.0;

    const int start = cfg.grid_start_bin > 0 ? cfg.grid_start_bin
                                             : static_cast<int>(std::int64_t{1} << (bits - 1));

    double best_value = std::numeric_limits<double>::infinity();
    int best_t = h.bin_count;

    for (int t = start; t <= h.bin_count; ++t) {
        const double threshold = static_cast<double>(t) * static_cast<double>(h.bin_width);
        const double scale = threshold / static_cast<double>(levels);

        double value;
        switch (cfg.metric) {
            case Metric::Mse:
                value = reconstruction_mse(h, scale, levels);
                break;
            case Metric::Cosine:
                value = reconstruction_cosine_distance(h, scale, levels);
                break;
            default: {
                const std::vector<float> p = clip_distribution(pkl, t);
                const std::vector<float> q = quantized_distribution(
                    pkl, t, static_cast<int>(levels), static_cast<double>(cfg.smoothing_eps));
                value = cfg.metric == Metric::KlNaive
                            ? static_cast<double>(kl_divergence_naive(p, q))
                            : static_cast<double>(kl_divergence(p, q));
                break;
            }
        }

        if (value < best_value) {
            best_value = value;
            best_t = t;
        }
    }

    const double threshold = static_cast<double>(best_t) * static_cast<double>(h.bin_width);
    return {static_cast<float>(threshold / static_cast<double>(levels)), bits};
}

std::vector<Histogram> collect_network_histograms(const RepModel& m,
                                                  std::span<const Tensor> samples,
                                                  const CalibConfig& cfg) {
    if (samples.empty()) throw ArgumentError("calibration needs at least one sample batch");
    m.validate();

    std::set<int> all;
    for (int i = 0; i < m.layer_count(); ++i) all.insert(i);

    std::vector<std::vector<Tensor>> per_layer(static_cast<std::size_t>(m.layer_count()));
    for (const Tensor& s : samples) {
        ForwardResult r = forward(m, s, all);
        for (auto& [idx, t] : r.captured) {
            per_layer[static_cast<std::size_t>(idx)].push_back(std::move(t));
        }
    }

    std::vector<Histogram> out;
    out.reserve(per_layer.size());
    for (const auto& acts : per_layer) {
        out.push_back(collect_histogram(acts, cfg.bins, cfg.relu_fused));
    }
    return out;
}

std::map<int, QuantParams> calibrate_network(const RepModel& m,
                                             std::span<const Tensor> samples,
                                             const CalibConfig& cfg, int bits) {
    const std::vector<Histogram> hists = collect_network_histograms(m, samples, cfg);
    std::map<int, QuantParams> scales;
    for (std::size_t i = 0; i < hists.size(); ++i) {
        scales[static_cast<int>(i)] = search_scale(hists[i], bits, cfg);
    }
    return scales;
}

} // namespace repq
