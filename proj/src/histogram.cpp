#include "repq/histogram.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <string>

#include <json.hpp>

#include "repq/errors.hpp"

namespace repq {

using nlohmann::ordered_json;

void Histogram::validate() const {
    if (bin_count < 2) throw ArgumentError("histogram needs at least 2 bins");
    if (counts.size() != static_cast<std::size_t>(bin_count)) {
        throw ArgumentError("histogram count array does not match bin_count");
    }
    if (!std::isfinite(max_abs) || max_abs < 0.0f) {
        throw NumericError("histogram max_abs must be finite and non-negative");
    }
    std::uint64_t sum = 0;
    for (std::uint64_t c : counts) sum += c;
    if (sum != total) throw NumericError("histogram counts do not sum to total");
}

Histogram collect_histogram(std::span<const Tensor> activations, int bins,
                            bool relu_fused) {
    if (activations.empty()) throw ArgumentError("collect_histogram: empty activation stream");
    if (bins < 2) throw ArgumentError("collect_histogram: need at least 2 bins");

    // Pass 1: range.
    double max_abs = 0.0;
    std::uint64_t total = 0;
    for (const Tensor& t : activations) {
        for (float v : t.values()) {
            if (!std::isfinite(v)) throw NumericError("collect_histogram: non-finite activation");
            const double m = relu_fused ? std::max(static_cast<double>(v), 0.0)
                                        : std::fabs(static_cast<double>(v));
            max_abs = std::max(max_abs, m);
            ++total;
        }
    }

    Histogram h;
    h.bin_count = bins;
    h.relu_fused = relu_fused;
    h.total = total;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    h.max_abs = static_cast<float>(max_abs);
    if (h.max_abs == 0.0f) {
        // Degenerate stream: every observation is zero and belongs in bin 0,
        // keeping the counts-sum-to-total contract.
        h.counts[0] = total;
        return h;
    }

    // Keep bin_width * bin_count at or above the observed maximum even after
    // rounding to float.
    float bw = static_cast<float>(max_abs / static_cast<double>(bins));
    while (static_cast<double>(bw) * static_cast<double>(bins) < max_abs) {
        bw = std::nextafter(bw, std::numeric_limits<float>::infinity());
    }
    h.bin_width = bw;

    // Pass 2: counts. Zeros (and rectified negatives) land in bin 0.
    const double inv = 1.0 / static_cast<double>(bw);
    for (const Tensor& t : activations) {
        for (float v : t.values()) {
            const double m = relu_fused ? std::max(static_cast<double>(v), 0.0)
                                        : std::fabs(static_cast<double>(v));
            int idx = static_cast<int>(m * inv);
            if (idx >= bins) idx = bins - 1;
            ++h.counts[static_cast<std::size_t>(idx)];
        }
    }
    return h;
}

void save_histogram_cache(const std::filesystem::path& file,
                          std::span<const Histogram> layer_histograms) {
    ordered_json j;
    j["format"] = "repq-histograms";
    j["version"] = 1;
    ordered_json layers = ordered_json::array();
    for (std::size_t i = 0; i < layer_histograms.size(); ++i) {
        const Histogram& h = layer_histograms[i];
        h.validate();
        ordered_json hj;
        hj["layer"] = i;
        hj["bin_count"] = h.bin_count;
        hj["bin_width"] = h.bin_width;
        hj["max_abs"] = h.max_abs;
        hj["total"] = h.total;
        hj["relu_fused"] = h.relu_fused;
        hj["counts"] = h.counts;
        layers.push_back(std::move(hj));
    }
    j["layers"] = std::move(layers);

    std::ofstream f(file, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f << j.dump(2) << "\n";
    if (!f) throw FormatError("failed writing '" + file.string() + "'");
}

std::vector<Histogram> load_histogram_cache(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw FormatError("cannot open '" + file.string() + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("histogram cache: not valid JSON: " + std::string(e.what()));
    }

    if (!j.contains("format") || j["format"] != "repq-histograms") {
        throw FormatError("histogram cache: field 'format': expected 'repq-histograms'");
    }
    if (!j.contains("layers") || !j["layers"].is_array()) {
        throw FormatError("histogram cache: missing 'layers' array");
    }

    std::vector<Histogram> out;
    for (const auto& hj : j["layers"]) {
        Histogram h;
        try {
            h.bin_count = hj.at("bin_count").get<int>();
            h.bin_width = hj.at("bin_width").get<float>();
            h.max_abs = hj.at("max_abs").get<float>();
            h.total = hj.at("total").get<std::uint64_t>();
            h.relu_fused = hj.at("relu_fused").get<bool>();
            h.counts = hj.at("counts").get<std::vector<std::uint64_t>>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("histogram cache: bad layer entry: " + std::string(e.what()));
        }
        h.validate();
        out.push_back(std::move(h));
    }
    return out;
}

} // namespace repq
