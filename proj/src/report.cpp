#include "repq/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <string>

#include "repq/errors.hpp"

namespace repq {

using nlohmann::ordered_json;

float cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ArgumentError("cosine_similarity: vectors differ in length");
    }
    if (a.empty()) throw ArgumentError("cosine_similarity: empty vectors");
    if (std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0) {
        return 1.0f;
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
        na += static_cast<double>(a[i]) * static_cast<double>(a[i]);
        nb += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (na <= 0.0 || nb <= 0.0) return 0.0f;
    return static_cast<float>(dot / (std::sqrt(na) * std::sqrt(nb)));
}

double sqnr_db(std::span<const float> reference, std::span<const float> test) {
    if (reference.size() != test.size()) {
        throw ArgumentError("sqnr_db: vectors differ in length");
    }
    double signal = 0.0, noise = 0.0;
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const double r = reference[i];
        const double d = r - static_cast<double>(test[i]);
        signal += r * r;
        noise += d * d;
    }
    if (noise == 0.0) return 200.0;
    if (signal == 0.0) return -200.0;
    return std::clamp(10.0 * std::log10(signal / noise), -200.0, 200.0);
}

namespace {

void check_same_architecture(const RepModel& fp, const QuantizedModel& q) {
    if (!fp.fully_fused()) {
        throw StructuralError("fidelity comparison needs the fused float model");
    }
    if (fp.layer_count() != q.layer_count()) {
        throw StructuralError("models differ in layer count (" + std::to_string(fp.layer_count()) +
                              " vs " + std::to_string(q.layer_count()) + ")");
    }
    if (fp.input_channels != q.input_channels || fp.input_height != q.input_height ||
        fp.input_width != q.input_width) {
        throw StructuralError("models differ in input dimensions");
    }
    for (int i = 0; i < fp.layer_count(); ++i) {
        const QuantConvLayer& l = q.layers[static_cast<std::size_t>(i)];
        if (fp.layer_out_channels(i) != l.weight_dims[0] ||
            fp.layer_in_channels(i) != l.weight_dims[1] ||
            fp.layer_stride(i) != l.stride) {
            throw StructuralError("layer " + std::to_string(i) + " differs between the models");
        }
    }
    if (fp.head.has_value() != q.head.has_value()) {
        throw StructuralError("one model has a classifier head, the other does not");
    }
    if (fp.head && (fp.head->classes != q.head->classes || fp.head->features != q.head->features)) {
        throw StructuralError("classifier heads differ between the models");
    }
}

} // namespace

FidelitySection fidelity_report(const RepModel& fp, const QuantizedModel& q,
                                const SampleSet& samples) {
    check_same_architecture(fp, q);
    if (samples.count() == 0) throw ArgumentError("fidelity_report: no samples");

    std::set<int> all;
    for (int i = 0; i < fp.layer_count(); ++i) all.insert(i);

    const ForwardResult rf = forward(fp, samples.batch, all);
    const ForwardResult rq = qforward(q, samples.batch, all);

    FidelitySection out;
    for (int i = 0; i < fp.layer_count(); ++i) {
        out.per_layer.push_back(
            {i, sqnr_db(rf.captured.at(i).values(), rq.captured.at(i).values())});
    }
    out.logit_cosine = cosine_similarity(rf.logits, rq.logits);
    if (samples.labeled()) {
        const std::vector<int> top = rq.argmax();
        int hits = 0;
        for (std::size_t i = 0; i < top.size(); ++i) {
            if (top[i] == samples.labels[i]) ++hits;
        }
        out.top1_agreement = static_cast<float>(hits) / static_cast<float>(top.size());
    }
    return out;
}

std::string format_float(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

ordered_json QuantReport::to_json() const {
    ordered_json j;
    j["format"] = "repq-report";
    j["version"] = 1;
    j["seed"] = seed;
    j["weight_scheme"] = weight_scheme;
    j["metric"] = metric;
    j["relu_fused"] = relu_fused;
    j["weight_bits"] = weight_bits;
    j["act_bits"] = act_bits;
    j["calib_sample_count"] = calib_sample_count;
    j["eval_sample_count"] = eval_sample_count;

    ordered_json layer_array = ordered_json::array();
    for (const LayerEntry& l : layers) {
        ordered_json lj;
        lj["layer"] = l.layer;
        lj["scheme"] = l.scheme;
        lj["weight_scale"] = l.weight_scale;
        if (l.coarse_scale) {
            lj["coarse_scale"] = *l.coarse_scale;
        } else {
            lj["coarse_scale"] = nullptr;
        }
        lj["act_scale"] = l.act_scale;
        lj["sqnr_db"] = l.sqnr_db;
        lj["macs"] = l.macs;
        lj["bops"] = l.bops;
        layer_array.push_back(std::move(lj));
    }
    j["layers"] = std::move(layer_array);

    j["total_bops"] = total_bops;
    j["total_gbops"] = total_gbops;
    j["logit_cosine"] = logit_cosine;
    if (top1_agreement) {
        j["top1_agreement"] = *top1_agreement;
    } else {
        j["top1_agreement"] = nullptr;
    }
    return j;
}

QuantReport QuantReport::from_json(const ordered_json& j) {
    QuantReport r;
    try {
        if (j.at("format") != "repq-report") {
            throw FormatError("report: field 'format': expected 'repq-report'");
        }
        r.seed = j.at("seed").get<std::uint64_t>();
        r.weight_scheme = j.at("weight_scheme").get<std::string>();
        r.metric = j.at("metric").get<std::string>();
        r.relu_fused = j.at("relu_fused").get<bool>();
        r.weight_bits = j.at("weight_bits").get<int>();
        r.act_bits = j.at("act_bits").get<int>();
        r.calib_sample_count = j.at("calib_sample_count").get<int>();
        r.eval_sample_count = j.at("eval_sample_count").get<int>();
        for (const auto& lj : j.at("layers")) {
            LayerEntry l;
            l.layer = lj.at("layer").get<int>();
            l.scheme = lj.at("scheme").get<std::string>();
            l.weight_scale = lj.at("weight_scale").get<float>();
            if (!lj.at("coarse_scale").is_null()) {
                l.coarse_scale = lj.at("coarse_scale").get<float>();
            }
            l.act_scale = lj.at("act_scale").get<float>();
            l.sqnr_db = lj.at("sqnr_db").get<double>();
            l.macs = lj.at("macs").get<std::uint64_t>();
            l.bops = lj.at("bops").get<std::uint64_t>();
            r.layers.push_back(std::move(l));
        }
        r.total_bops = j.at("total_bops").get<std::uint64_t>();
        r.total_gbops = j.at("total_gbops").get<double>();
        r.logit_cosine = j.at("logit_cosine").get<float>();
        if (!j.at("top1_agreement").is_null()) {
            r.top1_agreement = j.at("top1_agreement").get<float>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("report: " + std::string(e.what()));
    }
    return r;
}

void QuantReport::save(const std::filesystem::path& file) const {
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f << to_json().dump(2) << "\n";
    if (!f) throw FormatError("failed writing '" + file.string() + "'");
}

QuantReport QuantReport::load(const std::filesystem::path& file) {
    std::ifstream f(file);
    if (!f) throw FormatError("cannot open '" + file.string() + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("report: not valid JSON: " + std::string(e.what()));
    }
    return from_json(j);
}

void QuantReport::write_layers_csv(const std::filesystem::path& file) const {
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f << "layer,scheme,weight_bits,act_bits,weight_scale,coarse_scale,act_scale,sqnr_db,macs,bops\n";
    for (const LayerEntry& l : layers) {
        f << l.layer << "," << l.scheme << "," << weight_bits << "," << act_bits << ","
          << format_float(l.weight_scale) << ","
          << (l.coarse_scale ? format_float(*l.coarse_scale) : std::string()) << ","
          << format_float(l.act_scale) << "," << format_float(l.sqnr_db) << ","
          << l.macs << "," << l.bops << "\n";
    }
    if (!f) throw FormatError("failed writing '" + file.string() + "'");
}

ordered_json sweeps_to_json(std::span<const SweepCurve> curves) {
    ordered_json arr = ordered_json::array();
    for (const SweepCurve& c : curves) {
        ordered_json j;
        j["target"] = to_string(c.target);
        j["layer"] = c.layer;
        j["alphas"] = c.alphas;
        j["cosine"] = c.cosine;
        j["clipped_fraction"] = c.clipped_fraction;
        if (!c.top1_agreement.empty()) {
            j["top1_agreement"] = c.top1_agreement;
        } else {
            j["top1_agreement"] = nullptr;
        }
        arr.push_back(std::move(j));
    }
    ordered_json root;
    root["format"] = "repq-sweeps";
    root["version"] = 1;
    root["curves"] = std::move(arr);
    return root;
}

std::vector<SweepCurve> sweeps_from_json(const ordered_json& j) {
    std::vector<SweepCurve> out;
    try {
        if (j.at("format") != "repq-sweeps") {
            throw FormatError("sweeps: field 'format': expected 'repq-sweeps'");
        }
        for (const auto& cj : j.at("curves")) {
            SweepCurve c;
            c.target = sweep_target_from_string(cj.at("target").get<std::string>());
            c.layer = cj.at("layer").get<int>();
            c.alphas = cj.at("alphas").get<std::vector<float>>();
            c.cosine = cj.at("cosine").get<std::vector<float>>();
            c.clipped_fraction = cj.at("clipped_fraction").get<std::vector<float>>();
            if (!cj.at("top1_agreement").is_null()) {
                c.top1_agreement = cj.at("top1_agreement").get<std::vector<float>>();
            }
            out.push_back(std::move(c));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("sweeps: " + std::string(e.what()));
    }
    return out;
}

void write_sweep_csv(const std::filesystem::path& file, std::span<const SweepCurve> curves) {
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f << "target,layer,alpha,cosine,clipped_fraction,top1_agreement\n";
    for (const SweepCurve& c : curves) {
        for (std::size_t i = 0; i < c.alphas.size(); ++i) {
            f << to_string(c.target) << "," << c.layer << ","
              << format_float(c.alphas[i]) << "," << format_float(c.cosine[i]) << ","
              << format_float(c.clipped_fraction[i]) << ",";
            if (!c.top1_agreement.empty()) f << format_float(c.top1_agreement[i]);
            f << "\n";
        }
    }
    if (!f) throw FormatError("failed writing '" + file.string() + "'");
}

ordered_json bops_to_json(const BopsBreakdown& b, const BitConfig& cfg) {
    ordered_json arr = ordered_json::array();
    for (std::size_t i = 0; i < b.conv_layers.size(); ++i) {
        const auto& e = b.conv_layers[i];
        const LayerBits& lb = cfg.conv_layers[i];
        ordered_json j;
        j["layer"] = e.layer;
        j["weight_bits"] = lb.weight_bits;
        j["act_bits"] = lb.act_bits;
        j["scheme"] = to_string(lb.scheme);
        j["macs"] = e.macs;
        j["bops"] = e.bops;
        arr.push_back(std::move(j));
    }
    ordered_json root;
    root["format"] = "repq-bops";
    root["version"] = 1;
    root["layers"] = std::move(arr);
    if (b.head) {
        const LayerBits hb = cfg.head.value_or(cfg.conv_layers.back());
        root["head"] = {{"weight_bits", hb.weight_bits},
                        {"act_bits", hb.act_bits},
                        {"macs", b.head->macs},
                        {"bops", b.head->bops}};
    }
    root["total_bops"] = b.total_bops;
    root["total_gbops"] = b.total_gbops();
    return root;
}

void write_bops_csv(const std::filesystem::path& file, const BopsBreakdown& b,
                    const BitConfig& cfg) {
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f << "layer,weight_bits,act_bits,scheme,macs,bops\n";
    for (std::size_t i = 0; i < b.conv_layers.size(); ++i) {
        const auto& e = b.conv_layers[i];
        const LayerBits& lb = cfg.conv_layers[i];
        f << e.layer << "," << lb.weight_bits << "," << lb.act_bits << ","
          << to_string(lb.scheme) << "," << e.macs << "," << e.bops << "\n";
    }
    if (b.head) {
        const LayerBits hb = cfg.head.value_or(cfg.conv_layers.back());
        f << "head," << hb.weight_bits << "," << hb.act_bits << ",,"
          << b.head->macs << "," << b.head->bops << "\n";
    }
    f << "total,,,,," << b.total_bops << "\n";
    if (!f) throw FormatError("failed writing '" + file.string() + "'");
}

} // namespace repq
