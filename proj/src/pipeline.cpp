#include "repq/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "repq/bops.hpp"
#include "repq/errors.hpp"
#include "repq/rng.hpp"
#include "repq/sweep.hpp"

namespace repq {

using nlohmann::ordered_json;

void cmd_gen(const GenOptions& opt) {
    if (opt.out.empty()) throw ArgumentError("gen: output directory required");
    if (opt.calib_count < 1 || opt.eval_count < 1) {
        throw ArgumentError("gen: sample counts must be positive");
    }

    const RepModel m = generate_model(opt.arch, opt.seed);
    save_model(m, opt.out / "model");

    // The calibration set is unlabeled on purpose: scale search never sees
    // labels. The evaluation set carries the model's own predictions.
    save_samples(generate_samples(m, opt.calib_count, opt.seed + 1, false), opt.out / "calib");
    save_samples(generate_samples(m, opt.eval_count, opt.seed + 2, true), opt.out / "eval");

    ordered_json j;
    j["format"] = "repq-gen";
    j["version"] = 1;
    j["seed"] = opt.seed;
    j["arch"] = {{"input_channels", opt.arch.input_channels},
                 {"input_height", opt.arch.input_height},
                 {"input_width", opt.arch.input_width},
                 {"widths", opt.arch.widths},
                 {"strides", opt.arch.strides},
                 {"classes", opt.arch.classes},
                 {"center_dominant", opt.arch.center_dominant}};
    j["calib_count"] = opt.calib_count;
    j["eval_count"] = opt.eval_count;
    std::ofstream f(opt.out / "gen.json", std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + (opt.out / "gen.json").string() + "' for writing");
    f << j.dump(2) << "\n";
}

namespace {

// Largest absolute difference, normalized by the larger of the two
// magnitudes' maxima.
double relative_deviation(std::span<const float> a, std::span<const float> b) {
    double diff = 0.0, mag = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
        mag = std::max({mag, std::fabs(static_cast<double>(a[i])),
                        std::fabs(static_cast<double>(b[i]))});
    }
    return diff / std::max(mag, 1e-12);
}

} // namespace

RepModel fuse_all(const RepModel& m) {
    RepModel fused = m;
    for (auto& l : fused.layers) {
        if (const auto* b = std::get_if<RepBlock>(&l)) {
            l = merge_repblock(*b);
        }
    }
    return fused;
}

FuseOutcome cmd_fuse(const FuseOptions& opt) {
    const RepModel m = load_model(opt.model_in);

    FuseOutcome outcome;
    if (m.fully_fused()) {
        outcome.already_fused = true;
        save_model(m, opt.model_out);
        return outcome;
    }

    const RepModel fused = fuse_all(m);

    SeededRng rng(opt.probe_seed);
    Tensor probe(Layout::ActNCHW,
                 {std::max(opt.probe_count, 1), m.input_channels, m.input_height, m.input_width});
    rng.fill_gaussian(probe.values(), 0.0, 1.0);

    std::set<int> all;
    for (int i = 0; i < m.layer_count(); ++i) all.insert(i);
    const ForwardResult r0 = forward(m, probe, all);
    const ForwardResult r1 = forward(fused, probe, all);

    double dev = relative_deviation(r0.logits, r1.logits);
    for (int i = 0; i < m.layer_count(); ++i) {
        dev = std::max(dev, relative_deviation(r0.captured.at(i).values(),
                                               r1.captured.at(i).values()));
    }
    outcome.max_rel_deviation = dev;
    if (dev > opt.tolerance) {
        std::ostringstream msg;
        msg << "fuse: fused model deviates from the original by " << dev
            << " on probe inputs (tolerance " << opt.tolerance << ")";
        throw NumericError(msg.str());
    }

    save_model(fused, opt.model_out);
    return outcome;
}

QuantReport cmd_quantize(const QuantizeOptions& opt) {
    const RepModel m = load_model(opt.model);
    if (!m.fully_fused()) {
        throw StructuralError("quantize: the model still has multi-branch blocks; run fuse first");
    }
    const SampleSet calib = load_samples(opt.samples);

    CalibConfig cfg;
    cfg.metric = opt.metric;
    cfg.relu_fused = opt.relu_fused;

    const std::span<const Tensor> calib_batches(&calib.batch, 1);
    const std::vector<Histogram> hists = collect_network_histograms(m, calib_batches, cfg);
    std::map<int, QuantParams> act_scales;
    for (std::size_t i = 0; i < hists.size(); ++i) {
        act_scales[static_cast<int>(i)] = search_scale(hists[i], opt.bits, cfg);
    }

    const QuantizedModel qm = quantize_model(m, opt.scheme, opt.bits, act_scales);

    const SampleSet eval = opt.eval ? load_samples(*opt.eval) : calib;
    const FidelitySection fid = fidelity_report(m, qm, eval);

    const BitConfig bits_cfg = BitConfig::uniform(m, opt.bits, opt.bits, opt.scheme);
    const BopsBreakdown bops = count_bops(m, bits_cfg);

    QuantReport r;
    r.seed = opt.seed;
    r.weight_scheme = to_string(opt.scheme);
    r.metric = to_string(opt.metric);
    r.relu_fused = opt.relu_fused;
    r.weight_bits = opt.bits;
    r.act_bits = opt.bits;
    r.calib_sample_count = calib.count();
    r.eval_sample_count = eval.count();
    for (int i = 0; i < qm.layer_count(); ++i) {
        const QuantConvLayer& l = qm.layers[static_cast<std::size_t>(i)];
        QuantReport::LayerEntry e;
        e.layer = i;
        e.scheme = to_string(l.scheme);
        if (l.scheme == WeightScheme::Cfws) {
            e.weight_scale = l.cfws->fine_scale;
            e.coarse_scale = l.cfws->coarse_scale;
        } else {
            e.weight_scale = l.weight_scale;
        }
        e.act_scale = l.act.scale;
        e.sqnr_db = fid.per_layer[static_cast<std::size_t>(i)].sqnr_db;
        e.macs = bops.conv_layers[static_cast<std::size_t>(i)].macs;
        e.bops = bops.conv_layers[static_cast<std::size_t>(i)].bops;
        r.layers.push_back(std::move(e));
    }
    r.total_bops = bops.total_bops;
    r.total_gbops = bops.total_gbops();
    r.logit_cosine = fid.logit_cosine;
    r.top1_agreement = fid.top1_agreement;

    std::filesystem::create_directories(opt.out);
    save_quantized_model(qm, opt.out / "model");
    save_histogram_cache(opt.out / "histograms.json", hists);
    r.save(opt.out / "report.json");
    r.write_layers_csv(opt.out / "layers.csv");
    return r;
}

void cmd_analyze(const AnalyzeOptions& opt) {
    const RepModel m = load_model(opt.model);
    const SampleSet samples = load_samples(opt.samples);

    const std::vector<float> alphas = opt.alphas.empty() ? default_alpha_grid() : opt.alphas;
    std::vector<int> layers = opt.layers;
    if (layers.empty()) {
        for (int i = 0; i < m.layer_count(); ++i) layers.push_back(i);
    }

    std::vector<SweepCurve> curves;
    curves.reserve(layers.size());
    for (int l : layers) {
        curves.push_back(clip_sweep(m, samples, opt.target, l, alphas));
    }

    const BitConfig bits_cfg = BitConfig::uniform(m, opt.bits, opt.bits, opt.scheme);
    const BopsBreakdown bops = count_bops(m, bits_cfg);

    std::filesystem::create_directories(opt.out);
    {
        std::ofstream f(opt.out / "sweep.json", std::ios::trunc);
        if (!f) throw FormatError("cannot open sweep.json for writing");
        f << sweeps_to_json(curves).dump(2) << "\n";
    }
    write_sweep_csv(opt.out / "sweep.csv", curves);
    {
        std::ofstream f(opt.out / "bops.json", std::ios::trunc);
        if (!f) throw FormatError("cannot open bops.json for writing");
        f << bops_to_json(bops, bits_cfg).dump(2) << "\n";
    }
    write_bops_csv(opt.out / "bops.csv", bops, bits_cfg);
}

// Fixed-precision rendering for the human-readable table. The JSON and CSV
// outputs keep the exact shortest-round-trip representation; here we only
// need columns that line up.
static std::string table_float(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

std::string cmd_report(const std::filesystem::path& report_file) {
    const QuantReport r = QuantReport::load(report_file);

    std::ostringstream out;
    out << "quantization report\n";
    out << "  seed:            " << r.seed << "\n";
    out << "  weight scheme:   " << r.weight_scheme << "\n";
    out << "  metric:          " << r.metric << "\n";
    out << "  relu fused:      " << (r.relu_fused ? "yes" : "no") << "\n";
    out << "  bits:            " << r.weight_bits << " (weights), " << r.act_bits
        << " (activations)\n";
    out << "  samples:         " << r.calib_sample_count << " calibration, "
        << r.eval_sample_count << " evaluation\n";
    out << "  total BOPs:      " << r.total_bops << " (" << table_float(r.total_gbops)
        << " G)\n";
    out << "  logit cosine:    " << table_float(r.logit_cosine) << "\n";
    if (r.top1_agreement) {
        out << "  top-1 agreement: " << table_float(*r.top1_agreement) << "\n";
    } else {
        out << "  top-1 agreement: (no labels)\n";
    }
    out << "\n";
    out << "  layer  scheme   weight_scale   coarse_scale   act_scale      sqnr_db\n";
    for (const auto& l : r.layers) {
        out << "  " << std::left << std::setw(7) << l.layer << std::setw(9) << l.scheme
            << std::setw(15) << table_float(l.weight_scale)
            << std::setw(15) << (l.coarse_scale ? table_float(*l.coarse_scale) : "-")
            << std::setw(15) << table_float(l.act_scale)
            << table_float(l.sqnr_db) << "\n";
        out << std::right;
    }
    return out.str();
}

} // namespace repq
