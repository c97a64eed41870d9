#include "repq/qmodel.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "repq/errors.hpp"
#include "repq/model_io.hpp"

namespace repq {

using nlohmann::ordered_json;

const char* to_string(WeightScheme s) {
    return s == WeightScheme::Cfws ? "cfws" : "minmax";
}

WeightScheme weight_scheme_from_string(const std::string& s) {
    if (s == "minmax") return WeightScheme::MinMax;
    if (s == "cfws") return WeightScheme::Cfws;
    throw ArgumentError("unknown weight scheme '" + s + "' (expected minmax or cfws)");
}

Tensor QuantConvLayer::dequantized_weight() const {
    if (scheme == WeightScheme::Cfws) {
        return cfws_dequantize(*cfws);
    }
    return Tensor::from_data(Layout::WgtOIHW, weight_dims,
                             dequantize(codes, QuantParams{weight_scale, weight_bits}));
}

void QuantConvLayer::validate() const {
    if (weight_dims[2] != 3 || weight_dims[3] != 3) {
        throw StructuralError("quantized layer kernel must be 3x3");
    }
    if (weight_dims[0] <= 0 || weight_dims[1] <= 0) {
        throw StructuralError("quantized layer channel counts must be positive");
    }
    if (stride < 1) throw StructuralError("quantized layer stride must be at least 1");
    if (bias.size() != static_cast<std::size_t>(weight_dims[0])) {
        throw StructuralError("quantized layer bias does not match output channels");
    }
    if (scheme == WeightScheme::Cfws) {
        if (!cfws) throw StructuralError("cfws layer is missing its codes");
        cfws->validate();
        if (cfws->out_channels != weight_dims[0] || cfws->in_channels != weight_dims[1] ||
            cfws->bits != weight_bits) {
            throw StructuralError("cfws codes do not match the layer description");
        }
    } else {
        const std::size_t volume = static_cast<std::size_t>(weight_dims[0]) *
                                   static_cast<std::size_t>(weight_dims[1]) * 9;
        if (codes.size() != volume) {
            throw StructuralError("quantized layer code array does not match the kernel shape");
        }
        QuantParams{weight_scale, weight_bits}.validate();
    }
    act.validate();
}

void QuantizedModel::validate() const {
    if (input_channels <= 0 || input_height <= 0 || input_width <= 0) {
        throw StructuralError("quantized model input dimensions must be positive");
    }
    if (layers.empty()) throw StructuralError("quantized model has no layers");
    int channels = input_channels;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        layers[i].validate();
        if (layers[i].weight_dims[1] != channels) {
            throw StructuralError("quantized layer " + std::to_string(i) +
                                  " expects " + std::to_string(layers[i].weight_dims[1]) +
                                  " input channels, previous layer provides " + std::to_string(channels));
        }
        channels = layers[i].weight_dims[0];
    }
    if (head) {
        head->validate();
        if (head->features != channels) {
            throw StructuralError("quantized model head does not match the final channel count");
        }
    }
}

QuantizedModel quantize_model(const RepModel& fused, WeightScheme scheme, int bits,
                              const std::map<int, QuantParams>& act_scales) {
    fused.validate();
    if (!fused.fully_fused()) {
        throw StructuralError("quantize_model requires a fused model; run the fuse step first");
    }

    QuantizedModel qm;
    qm.input_channels = fused.input_channels;
    qm.input_height = fused.input_height;
    qm.input_width = fused.input_width;
    qm.head = fused.head;

    for (int i = 0; i < fused.layer_count(); ++i) {
        const FusedConv& f = std::get<FusedConv>(fused.layers[static_cast<std::size_t>(i)]);
        const auto it = act_scales.find(i);
        if (it == act_scales.end()) {
            throw ArgumentError("quantize_model: no activation scale for layer " + std::to_string(i));
        }

        QuantConvLayer l;
        l.scheme = scheme;
        l.weight_bits = bits;
        l.weight_dims = f.weight.dims();
        l.bias = f.bias;
        l.stride = f.stride;
        l.relu = f.followed_by_relu;
        l.act = it->second;
        if (scheme == WeightScheme::Cfws) {
            l.cfws = cfws_quantize(f.weight, bits);
        } else {
            const QuantParams p = minmax_scale(f.weight.values(), bits);
            l.weight_scale = p.scale;
            l.codes = quantize(f.weight.values(), p);
        }
        qm.layers.push_back(std::move(l));
    }
    return qm;
}

ForwardResult qforward(const QuantizedModel& m, const Tensor& x,
                       const std::set<int>& capture) {
    m.validate();
    if (x.layout() != Layout::ActNCHW) throw ShapeError("qforward: input must be an NCHW activation tensor");
    if (x.dim(1) != m.input_channels || x.dim(2) != m.input_height || x.dim(3) != m.input_width) {
        throw ShapeError("qforward: input dimensions do not match the model");
    }
    for (int idx : capture) {
        if (idx < 0 || idx >= m.layer_count()) {
            throw ArgumentError("qforward: capture index " + std::to_string(idx) + " out of range");
        }
    }

    ForwardResult r;
    r.batch = x.dim(0);

    Tensor cur = x;
    for (int i = 0; i < m.layer_count(); ++i) {
        const QuantConvLayer& l = m.layers[static_cast<std::size_t>(i)];
        Tensor y;
        if (l.scheme == WeightScheme::Cfws) {
            y = cfws_conv(cur, *l.cfws, l.bias, l.stride, 1);
        } else {
            y = conv2d(cur, l.dequantized_weight(), l.bias, l.stride, 1);
        }
        if (capture.count(i)) r.captured[i] = y;
        if (l.relu) y = relu(y);
        cur = fake_quantize(y, l.act);
    }

    // Pool and classify in float, mirroring the float model.
    ForwardResult pooled = pool_and_classify(cur, m.head);
    r.logit_dim = pooled.logit_dim;
    r.logits = std::move(pooled.logits);
    return r;
}

void save_quantized_model(const QuantizedModel& m, const std::filesystem::path& dir) {
    m.validate();
    std::filesystem::create_directories(dir);

    ordered_json j;
    j["format"] = "repq-quantized-model";
    j["version"] = 1;
    j["endianness"] = "little";
    j["input"] = {{"channels", m.input_channels},
                  {"height", m.input_height},
                  {"width", m.input_width}};

    ordered_json layers = ordered_json::array();
    for (int i = 0; i < m.layer_count(); ++i) {
        const QuantConvLayer& l = m.layers[static_cast<std::size_t>(i)];
        const std::string prefix = "layer" + std::to_string(i);
        const int storage = storage_bits_for(l.weight_bits);

        ordered_json lj;
        lj["scheme"] = to_string(l.scheme);
        lj["bits"] = l.weight_bits;
        lj["out_channels"] = l.weight_dims[0];
        lj["in_channels"] = l.weight_dims[1];
        lj["stride"] = l.stride;
        lj["relu"] = l.relu;
        if (l.scheme == WeightScheme::Cfws) {
            lj["s_fine"] = l.cfws->fine_scale;
            lj["s_coarse"] = l.cfws->coarse_scale;
            write_blob_int(dir / (prefix + "_fine.bin"), l.cfws->fine, storage);
            write_blob_int(dir / (prefix + "_coarse.bin"), l.cfws->coarse, storage);
            lj["fine"] = prefix + "_fine.bin";
            lj["coarse"] = prefix + "_coarse.bin";
        } else {
            lj["s_fine"] = l.weight_scale;
            write_blob_int(dir / (prefix + "_codes.bin"), l.codes, storage);
            lj["codes"] = prefix + "_codes.bin";
        }
        write_blob_f32(dir / (prefix + "_bias.bin"), l.bias);
        lj["bias"] = prefix + "_bias.bin";
        lj["act"] = {{"bits", l.act.bits}, {"scale", l.act.scale}};
        layers.push_back(std::move(lj));
    }
    j["layers"] = std::move(layers);

    if (m.head) {
        ordered_json hj;
        hj["classes"] = m.head->classes;
        hj["features"] = m.head->features;
        write_blob_f32(dir / "head_weight.bin", m.head->weight);
        write_blob_f32(dir / "head_bias.bin", m.head->bias);
        hj["weight"] = "head_weight.bin";
        hj["bias"] = "head_bias.bin";
        j["head"] = std::move(hj);
    }

    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + (dir / "manifest.json").string() + "' for writing");
    f << j.dump(2) << "\n";
    if (!f) throw FormatError("failed writing quantized model manifest");
}

namespace {

template <typename T>
T manifest_get(const ordered_json& j, const char* name, const std::string& ctx) {
    const auto it = j.find(name);
    if (it == j.end()) {
        throw FormatError("manifest.json: " + ctx + ": missing field '" + std::string(name) + "'");
    }
    try {
        return it->get<T>();
    } catch (const nlohmann::json::exception&) {
        throw FormatError("manifest.json: " + ctx + ": field '" + std::string(name) + "' has the wrong type");
    }
}

} // namespace

QuantizedModel load_quantized_model(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw FormatError("cannot open '" + (dir / "manifest.json").string() + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest.json: not valid JSON: " + std::string(e.what()));
    }

    if (manifest_get<std::string>(j, "format", "header") != "repq-quantized-model") {
        throw FormatError("manifest.json: field 'format': expected 'repq-quantized-model'");
    }
    if (manifest_get<std::string>(j, "endianness", "header") != "little") {
        throw FormatError("manifest.json: field 'endianness': only little-endian files are supported");
    }

    QuantizedModel m;
    const auto& input = j.at("input");
    m.input_channels = manifest_get<int>(input, "channels", "input");
    m.input_height = manifest_get<int>(input, "height", "input");
    m.input_width = manifest_get<int>(input, "width", "input");

    if (!j.contains("layers") || !j["layers"].is_array()) {
        throw FormatError("manifest.json: missing 'layers' array");
    }
    for (std::size_t i = 0; i < j["layers"].size(); ++i) {
        const std::string ctx = "layers[" + std::to_string(i) + "]";
        const auto& lj = j["layers"][i];

        QuantConvLayer l;
        l.scheme = weight_scheme_from_string(manifest_get<std::string>(lj, "scheme", ctx));
        l.weight_bits = manifest_get<int>(lj, "bits", ctx);
        const int o = manifest_get<int>(lj, "out_channels", ctx);
        const int ic = manifest_get<int>(lj, "in_channels", ctx);
        if (o <= 0 || ic <= 0) throw FormatError("manifest.json: " + ctx + ": channel counts must be positive");
        l.weight_dims = {o, ic, 3, 3};
        l.stride = manifest_get<int>(lj, "stride", ctx);
        l.relu = manifest_get<bool>(lj, "relu", ctx);

        const std::size_t oi = static_cast<std::size_t>(o) * static_cast<std::size_t>(ic);
        const int storage = storage_bits_for(l.weight_bits);
        if (l.scheme == WeightScheme::Cfws) {
            CFWSWeights c;
            c.out_channels = o;
            c.in_channels = ic;
            c.bits = l.weight_bits;
            c.fine_scale = manifest_get<float>(lj, "s_fine", ctx);
            c.coarse_scale = manifest_get<float>(lj, "s_coarse", ctx);
            c.fine = read_blob_int(dir / manifest_get<std::string>(lj, "fine", ctx), oi * 9, storage);
            c.coarse = read_blob_int(dir / manifest_get<std::string>(lj, "coarse", ctx), oi, storage);
            l.cfws = std::move(c);
        } else {
            l.weight_scale = manifest_get<float>(lj, "s_fine", ctx);
            l.codes = read_blob_int(dir / manifest_get<std::string>(lj, "codes", ctx), oi * 9, storage);
        }
        l.bias = read_blob_f32(dir / manifest_get<std::string>(lj, "bias", ctx), static_cast<std::size_t>(o));
        const auto act = lj.find("act");
        if (act == lj.end()) throw FormatError("manifest.json: " + ctx + ": missing field 'act'");
        l.act.bits = manifest_get<int>(*act, "bits", ctx + ".act");
        l.act.scale = manifest_get<float>(*act, "scale", ctx + ".act");
        m.layers.push_back(std::move(l));
    }

    if (j.contains("head")) {
        const auto& hj = j["head"];
        GapLinearHead h;
        h.classes = manifest_get<int>(hj, "classes", "head");
        h.features = manifest_get<int>(hj, "features", "head");
        if (h.classes <= 0 || h.features <= 0) {
            throw FormatError("manifest.json: head: classes and features must be positive");
        }
        h.weight = read_blob_f32(dir / manifest_get<std::string>(hj, "weight", "head"),
                                 static_cast<std::size_t>(h.classes) * static_cast<std::size_t>(h.features));
        h.bias = read_blob_f32(dir / manifest_get<std::string>(hj, "bias", "head"),
                               static_cast<std::size_t>(h.classes));
        m.head = std::move(h);
    }

    try {
        m.validate();
    } catch (const StructuralError& e) {
        throw FormatError("manifest.json: quantized model fails validation: " + std::string(e.what()));
    }
    return m;
}

} // namespace repq
