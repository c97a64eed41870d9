#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "repq/errors.hpp"
#include "repq/pipeline.hpp"

namespace {

// A config file is a single JSON document whose keys mirror the long flags.
// Values from the file become defaults; anything passed on the command line
// wins.
std::string find_config_arg(int argc, char** argv) {
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--config" && i + 1 < argc) return argv[i + 1];
        if (a.rfind("--config=", 0) == 0) return a.substr(9);
    }
    return {};
}

nlohmann::json load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw repq::FormatError("cannot open config file '" + path + "'");
    try {
        return nlohmann::json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw repq::FormatError("config file '" + path + "': not valid JSON: " + std::string(e.what()));
    }
}

template <typename T>
void from_config(const nlohmann::json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        throw repq::ArgumentError("config field '" + std::string(key) + "' has the wrong type");
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"post-training quantization toolkit for re-parameterized conv nets"};
    app.require_subcommand(1);

    std::string config_path;
    nlohmann::json config;

    // shared option state
    std::string model_path, samples_path, eval_path, out_path, report_path;
    std::string scheme = "cfws";
    std::string metric = "kl-transformed";
    bool relu_fused = true;
    int bits = 8;
    std::uint64_t seed = 0;

    // gen
    int calib_count = 32, eval_count = 256;
    repq::ArchSpec arch = repq::reference_arch();

    // fuse
    int probe_count = 4;
    std::uint64_t probe_seed = 7;
    double fuse_tolerance = 1e-4;

    // analyze
    std::string target = "activation";
    std::vector<int> sweep_layers;
    std::vector<float> sweep_alphas;

    try {
        config_path = find_config_arg(argc, argv);
        if (!config_path.empty()) config = load_config_file(config_path);
        from_config(config, "model", model_path);
        from_config(config, "samples", samples_path);
        from_config(config, "eval", eval_path);
        from_config(config, "out", out_path);
        from_config(config, "report", report_path);
        from_config(config, "scheme", scheme);
        from_config(config, "metric", metric);
        from_config(config, "relu_fused", relu_fused);
        from_config(config, "bits", bits);
        from_config(config, "seed", seed);
        from_config(config, "calib_samples", calib_count);
        from_config(config, "eval_samples", eval_count);
        from_config(config, "widths", arch.widths);
        from_config(config, "strides", arch.strides);
        from_config(config, "classes", arch.classes);
        from_config(config, "input_channels", arch.input_channels);
        from_config(config, "input_height", arch.input_height);
        from_config(config, "input_width", arch.input_width);
        from_config(config, "center_dominant", arch.center_dominant);
        from_config(config, "probe_count", probe_count);
        from_config(config, "probe_seed", probe_seed);
        from_config(config, "tolerance", fuse_tolerance);
        from_config(config, "target", target);
        from_config(config, "layers", sweep_layers);
        from_config(config, "alphas", sweep_alphas);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return repq::exit_code_for(e);
    }

    const auto add_config_flag = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file; command line flags override it");
    };

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic model plus calibration and evaluation samples");
    gen->add_option("--seed", seed, "generation seed");
    gen->add_option("--out", out_path, "output directory")->required();
    gen->add_option("--calib-samples", calib_count, "calibration sample count");
    gen->add_option("--eval-samples", eval_count, "evaluation sample count");
    gen->add_option("--widths", arch.widths, "per-block output channels")->delimiter(',');
    gen->add_option("--strides", arch.strides, "per-block strides")->delimiter(',');
    gen->add_option("--classes", arch.classes, "classifier classes");
    gen->add_option("--input-channels", arch.input_channels, "input channels");
    gen->add_option("--input-height", arch.input_height, "input height");
    gen->add_option("--input-width", arch.input_width, "input width");
    gen->add_option("--center-dominant", arch.center_dominant,
                    "make fused kernel centers dominate their surrounds");
    add_config_flag(gen);

    CLI::App* fuse = app.add_subcommand("fuse", "merge every multi-branch block into a single conv");
    fuse->add_option("--model", model_path, "input model directory")->required();
    fuse->add_option("--out", out_path, "output model directory")->required();
    fuse->add_option("--probe-count", probe_count, "probe batch size for the equivalence check");
    fuse->add_option("--probe-seed", probe_seed, "probe batch seed");
    fuse->add_option("--tolerance", fuse_tolerance, "maximum allowed relative deviation");
    add_config_flag(fuse);

    CLI::App* quantize = app.add_subcommand("quantize", "calibrate and quantize a fused model");
    quantize->add_option("--model", model_path, "fused model directory")->required();
    quantize->add_option("--samples", samples_path, "calibration sample directory")->required();
    quantize->add_option("--eval", eval_path, "evaluation sample directory for fidelity metrics");
    quantize->add_option("--out", out_path, "output directory")->required();
    quantize->add_option("--scheme", scheme, "weight scheme")
        ->check(CLI::IsMember({"minmax", "cfws"}));
    quantize->add_option("--metric", metric, "activation scale metric")
        ->check(CLI::IsMember({"minmax", "mse", "cosine", "kl", "kl-transformed"}));
    quantize->add_option("--relu-fused", relu_fused, "calibrate on rectified activations");
    quantize->add_option("--bits", bits, "weight and activation bit depth");
    quantize->add_option("--seed", seed, "seed recorded in the report");
    add_config_flag(quantize);

    CLI::App* analyze = app.add_subcommand("analyze", "clip sweeps and the BOPs table for a fused model");
    analyze->add_option("--model", model_path, "fused model directory")->required();
    analyze->add_option("--samples", samples_path, "sample directory")->required();
    analyze->add_option("--out", out_path, "output directory")->required();
    analyze->add_option("--target", target, "what to clip")
        ->check(CLI::IsMember({"weight", "activation"}));
    analyze->add_option("--layers", sweep_layers, "layers to sweep (default: all)")->delimiter(',');
    analyze->add_option("--alphas", sweep_alphas, "clip fractions (default: 1.0 down to 0.05)")
        ->delimiter(',');
    analyze->add_option("--bits", bits, "bit depth for the BOPs table");
    analyze->add_option("--scheme", scheme, "weight scheme for the BOPs table")
        ->check(CLI::IsMember({"minmax", "cfws"}));
    analyze->add_option("--seed", seed, "seed recorded alongside the outputs");
    add_config_flag(analyze);

    CLI::App* report = app.add_subcommand("report", "print a saved quantization report");
    report->add_option("report", report_path, "path to report.json")->required();
    add_config_flag(report);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return repq::exit_code::config;
    }

    try {
        if (gen->parsed()) {
            repq::GenOptions opt;
            opt.arch = arch;
            opt.seed = seed;
            opt.calib_count = calib_count;
            opt.eval_count = eval_count;
            opt.out = out_path;
            repq::cmd_gen(opt);
            std::cout << "wrote model and samples to " << out_path << "\n";
        } else if (fuse->parsed()) {
            repq::FuseOptions opt;
            opt.model_in = model_path;
            opt.model_out = out_path;
            opt.probe_count = probe_count;
            opt.probe_seed = probe_seed;
            opt.tolerance = fuse_tolerance;
            const repq::FuseOutcome outcome = repq::cmd_fuse(opt);
            if (outcome.already_fused) {
                std::cout << "model already fused; copied to " << out_path << "\n";
            } else {
                std::cout << "fused model written to " << out_path
                          << " (max relative deviation " << outcome.max_rel_deviation << ")\n";
            }
        } else if (quantize->parsed()) {
            repq::QuantizeOptions opt;
            opt.model = model_path;
            opt.samples = samples_path;
            if (!eval_path.empty()) opt.eval = eval_path;
            opt.out = out_path;
            opt.scheme = repq::weight_scheme_from_string(scheme);
            opt.metric = repq::metric_from_string(metric);
            opt.relu_fused = relu_fused;
            opt.bits = bits;
            opt.seed = seed;
            const repq::QuantReport r = repq::cmd_quantize(opt);
            std::cout << "quantized model and report written to " << out_path << "\n";
            std::cout << "logit cosine: " << repq::format_float(r.logit_cosine) << "\n";
            if (r.top1_agreement) {
                std::cout << "top-1 agreement: " << repq::format_float(*r.top1_agreement) << "\n";
            }
        } else if (analyze->parsed()) {
            repq::AnalyzeOptions opt;
            opt.model = model_path;
            opt.samples = samples_path;
            opt.out = out_path;
            opt.target = repq::sweep_target_from_string(target);
            opt.layers = sweep_layers;
            opt.alphas = sweep_alphas;
            opt.bits = bits;
            opt.scheme = repq::weight_scheme_from_string(scheme);
            opt.seed = seed;
            repq::cmd_analyze(opt);
            std::cout << "sweep and BOPs tables written to " << out_path << "\n";
        } else if (report->parsed()) {
            std::cout << repq::cmd_report(report_path);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return repq::exit_code_for(e);
    }
    return repq::exit_code::ok;
}
