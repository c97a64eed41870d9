#include "repq/model_io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include <json.hpp>

#include "repq/errors.hpp"

namespace repq {

using nlohmann::ordered_json;

namespace {

void write_bytes(const std::filesystem::path& file, const std::vector<unsigned char>& buf) {
    std::ofstream f(file, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("failed writing blob '" + file.string() + "'");
}

std::vector<unsigned char> read_bytes(const std::filesystem::path& file, std::size_t expected) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw FormatError("blob '" + file.filename().string() + "' is missing");
    f.seekg(0, std::ios::end);
    const auto size = static_cast<std::size_t>(f.tellg());
    if (size != expected) {
        throw FormatError("blob '" + file.filename().string() + "': expected " +
                          std::to_string(expected) + " bytes, file has " + std::to_string(size));
    }
    f.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(size);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(size));
    if (!f) throw FormatError("failed reading blob '" + file.filename().string() + "'");
    return buf;
}

// Manifest access with errors that name the missing or mistyped field.
const ordered_json& field(const ordered_json& j, const char* name, const std::string& ctx) {
    const auto it = j.find(name);
    if (it == j.end()) {
        throw FormatError("manifest.json: " + ctx + ": missing field '" + name + "'");
    }
    return *it;
}

std::string get_string(const ordered_json& j, const char* name, const std::string& ctx) {
    const auto& v = field(j, name, ctx);
    if (!v.is_string()) throw FormatError("manifest.json: " + ctx + ": field '" + name + "' must be a string");
    return v.get<std::string>();
}

std::int64_t get_int(const ordered_json& j, const char* name, const std::string& ctx) {
    const auto& v = field(j, name, ctx);
    if (!v.is_number_integer()) throw FormatError("manifest.json: " + ctx + ": field '" + name + "' must be an integer");
    return v.get<std::int64_t>();
}

bool get_bool(const ordered_json& j, const char* name, const std::string& ctx) {
    const auto& v = field(j, name, ctx);
    if (!v.is_boolean()) throw FormatError("manifest.json: " + ctx + ": field '" + name + "' must be a boolean");
    return v.get<bool>();
}

float get_float(const ordered_json& j, const char* name, const std::string& ctx) {
    const auto& v = field(j, name, ctx);
    if (!v.is_number()) throw FormatError("manifest.json: " + ctx + ": field '" + name + "' must be a number");
    return v.get<float>();
}

ordered_json parse_manifest(const std::filesystem::path& dir) {
    const auto file = dir / "manifest.json";
    std::ifstream f(file);
    if (!f) throw FormatError("cannot open '" + file.string() + "'");
    try {
        return ordered_json::parse(f);
    } catch (const nlohmann::json::parse_error& e) {
        throw FormatError("manifest.json: not valid JSON: " + std::string(e.what()));
    }
}

void write_manifest(const std::filesystem::path& dir, const ordered_json& j) {
    const auto file = dir / "manifest.json";
    std::ofstream f(file, std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + file.string() + "' for writing");
    f << j.dump(2) << "\n";
    if (!f) throw FormatError("failed writing '" + file.string() + "'");
}

void check_header(const ordered_json& j, const char* expected_format) {
    if (get_string(j, "format", "header") != expected_format) {
        throw FormatError("manifest.json: field 'format': expected '" + std::string(expected_format) + "'");
    }
    if (get_int(j, "version", "header") != 1) {
        throw FormatError("manifest.json: field 'version': only version 1 is supported");
    }
    if (get_string(j, "endianness", "header") != "little") {
        throw FormatError("manifest.json: field 'endianness': only little-endian files are supported");
    }
}

std::vector<float> load_f32_checked(const std::filesystem::path& dir, const std::string& name,
                                    std::size_t count) {
    std::vector<float> v = read_blob_f32(dir / name, count);
    for (float x : v) {
        if (!std::isfinite(x)) {
            throw FormatError("blob '" + name + "' contains non-finite values");
        }
    }
    return v;
}

ordered_json bn_to_json(const std::filesystem::path& dir, const std::string& prefix,
                        const BatchNormParams& bn) {
    write_blob_f32(dir / (prefix + "_gamma.bin"), bn.gamma);
    write_blob_f32(dir / (prefix + "_beta.bin"), bn.beta);
    write_blob_f32(dir / (prefix + "_mean.bin"), bn.running_mean);
    write_blob_f32(dir / (prefix + "_var.bin"), bn.running_var);
    ordered_json j;
    j["gamma"] = prefix + "_gamma.bin";
    j["beta"] = prefix + "_beta.bin";
    j["mean"] = prefix + "_mean.bin";
    j["var"] = prefix + "_var.bin";
    j["epsilon"] = bn.epsilon;
    return j;
}

BatchNormParams bn_from_json(const std::filesystem::path& dir, const ordered_json& j,
                             std::size_t channels, const std::string& ctx) {
    BatchNormParams bn;
    bn.gamma = load_f32_checked(dir, get_string(j, "gamma", ctx), channels);
    bn.beta = load_f32_checked(dir, get_string(j, "beta", ctx), channels);
    bn.running_mean = load_f32_checked(dir, get_string(j, "mean", ctx), channels);
    bn.running_var = load_f32_checked(dir, get_string(j, "var", ctx), channels);
    bn.epsilon = get_float(j, "epsilon", ctx);
    return bn;
}

} // namespace

void write_blob_f32(const std::filesystem::path& file, std::span<const float> data) {
    std::vector<unsigned char> buf(data.size() * 4);
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint32_t u;
        static_assert(sizeof(float) == sizeof(std::uint32_t));
        std::memcpy(&u, &data[i], 4);
        buf[i * 4 + 0] = static_cast<unsigned char>(u & 0xff);
        buf[i * 4 + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
        buf[i * 4 + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
        buf[i * 4 + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
    }
    write_bytes(file, buf);
}

std::vector<float> read_blob_f32(const std::filesystem::path& file, std::size_t count) {
    const std::vector<unsigned char> buf = read_bytes(file, count * 4);
    std::vector<float> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t u = static_cast<std::uint32_t>(buf[i * 4 + 0]) |
                                (static_cast<std::uint32_t>(buf[i * 4 + 1]) << 8) |
                                (static_cast<std::uint32_t>(buf[i * 4 + 2]) << 16) |
                                (static_cast<std::uint32_t>(buf[i * 4 + 3]) << 24);
        std::memcpy(&out[i], &u, 4);
    }
    return out;
}

int storage_bits_for(int quant_bits) {
    if (quant_bits <= 8) return 8;
    if (quant_bits <= 16) return 16;
    return 32;
}

void write_blob_int(const std::filesystem::path& file, std::span<const std::int32_t> codes,
                    int storage_bits) {
    if (storage_bits != 8 && storage_bits != 16 && storage_bits != 32) {
        throw ArgumentError("integer blobs support 8, 16 or 32 bit storage");
    }
    const int bytes = storage_bits / 8;
    const std::int64_t lo = -(std::int64_t{1} << (storage_bits - 1));
    const std::int64_t hi = (std::int64_t{1} << (storage_bits - 1)) - 1;
    std::vector<unsigned char> buf(codes.size() * static_cast<std::size_t>(bytes));
    for (std::size_t i = 0; i < codes.size(); ++i) {
        if (codes[i] < lo || codes[i] > hi) {
            throw ArgumentError("code " + std::to_string(codes[i]) + " does not fit " +
                                std::to_string(storage_bits) + "-bit storage");
        }
        const std::uint32_t u = static_cast<std::uint32_t>(codes[i]);
        for (int b = 0; b < bytes; ++b) {
            buf[i * static_cast<std::size_t>(bytes) + static_cast<std::size_t>(b)] =
                static_cast<unsigned char>((u >> (8 * b)) & 0xff);
        }
    }
    write_bytes(file, buf);
}

std::vector<std::int32_t> read_blob_int(const std::filesystem::path& file, std::size_t count,
                                        int storage_bits) {
    if (storage_bits != 8 && storage_bits != 16 && storage_bits != 32) {
        throw ArgumentError("integer blobs support 8, 16 or 32 bit storage");
    }
    const int bytes = storage_bits / 8;
    const std::vector<unsigned char> buf = read_bytes(file, count * static_cast<std::size_t>(bytes));
    std::vector<std::int32_t> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < bytes; ++b) {
            u |= static_cast<std::uint32_t>(buf[i * static_cast<std::size_t>(bytes) + static_cast<std::size_t>(b)]) << (8 * b);
        }
        // sign extend
        if (storage_bits < 32 && (u & (std::uint32_t{1} << (storage_bits - 1)))) {
            u |= ~((std::uint32_t{1} << storage_bits) - 1);
        }
        std::memcpy(&out[i], &u, 4);
    }
    return out;
}

void save_model(const RepModel& m, const std::filesystem::path& dir) {
    m.validate();
    std::filesystem::create_directories(dir);

    ordered_json j;
    j["format"] = "repq-model";
    j["version"] = 1;
    j["endianness"] = "little";
    j["input"] = {{"channels", m.input_channels},
                  {"height", m.input_height},
                  {"width", m.input_width}};

    ordered_json layers = ordered_json::array();
    for (int i = 0; i < m.layer_count(); ++i) {
        const std::string prefix = "layer" + std::to_string(i);
        const auto& l = m.layers[static_cast<std::size_t>(i)];
        ordered_json lj;
        if (const auto* f = std::get_if<FusedConv>(&l)) {
            lj["kind"] = "fused_conv";
            lj["out_channels"] = f->weight.dim(0);
            lj["in_channels"] = f->weight.dim(1);
            lj["stride"] = f->stride;
            lj["relu"] = f->followed_by_relu;
            write_blob_f32(dir / (prefix + "_weight.bin"), f->weight.values());
            write_blob_f32(dir / (prefix + "_bias.bin"), f->bias);
            lj["weight"] = prefix + "_weight.bin";
            lj["bias"] = prefix + "_bias.bin";
        } else {
            const RepBlock& b = std::get<RepBlock>(l);
            lj["kind"] = "rep_block";
            lj["out_channels"] = b.out_channels();
            lj["in_channels"] = b.in_channels();
            lj["stride"] = b.stride;
            ordered_json b3;
            write_blob_f32(dir / (prefix + "_b3_weight.bin"), b.branch3x3.weight.values());
            b3["weight"] = prefix + "_b3_weight.bin";
            b3["bn"] = bn_to_json(dir, prefix + "_b3", b.branch3x3.bn);
            lj["branch3x3"] = std::move(b3);
            if (b.branch1x1) {
                ordered_json b1;
                write_blob_f32(dir / (prefix + "_b1_weight.bin"), b.branch1x1->weight.values());
                b1["weight"] = prefix + "_b1_weight.bin";
                b1["bn"] = bn_to_json(dir, prefix + "_b1", b.branch1x1->bn);
                lj["branch1x1"] = std::move(b1);
            }
            if (b.branch_id) {
                ordered_json bi;
                bi["bn"] = bn_to_json(dir, prefix + "_id", *b.branch_id);
                lj["branch_id"] = std::move(bi);
            }
        }
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

    write_manifest(dir, j);
}

RepModel load_model(const std::filesystem::path& dir) {
    const ordered_json j = parse_manifest(dir);
    check_header(j, "repq-model");

    RepModel m;
    const auto& input = field(j, "input", "header");
    m.input_channels = static_cast<int>(get_int(input, "channels", "input"));
    m.input_height = static_cast<int>(get_int(input, "height", "input"));
    m.input_width = static_cast<int>(get_int(input, "width", "input"));

    const auto& layers = field(j, "layers", "header");
    if (!layers.is_array()) throw FormatError("manifest.json: field 'layers' must be an array");

    for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string ctx = "layers[" + std::to_string(i) + "]";
        const auto& lj = layers[i];
        const std::string kind = get_string(lj, "kind", ctx);
        const int o = static_cast<int>(get_int(lj, "out_channels", ctx));
        const int ic = static_cast<int>(get_int(lj, "in_channels", ctx));
        if (o <= 0 || ic <= 0) throw FormatError("manifest.json: " + ctx + ": channel counts must be positive");
        const int stride = static_cast<int>(get_int(lj, "stride", ctx));
        const std::size_t oc = static_cast<std::size_t>(o);
        const std::size_t icc = static_cast<std::size_t>(ic);

        if (kind == "fused_conv") {
            FusedConv f;
            f.weight = Tensor::from_data(Layout::WgtOIHW, {o, ic, 3, 3},
                                         load_f32_checked(dir, get_string(lj, "weight", ctx), oc * icc * 9));
            f.bias = load_f32_checked(dir, get_string(lj, "bias", ctx), oc);
            f.stride = stride;
            f.followed_by_relu = get_bool(lj, "relu", ctx);
            m.layers.emplace_back(std::move(f));
        } else if (kind == "rep_block") {
            RepBlock b;
            b.stride = stride;
            const auto& b3 = field(lj, "branch3x3", ctx);
            b.branch3x3.weight = Tensor::from_data(Layout::WgtOIHW, {o, ic, 3, 3},
                                                   load_f32_checked(dir, get_string(b3, "weight", ctx), oc * icc * 9));
            b.branch3x3.bn = bn_from_json(dir, field(b3, "bn", ctx), oc, ctx + ".branch3x3");
            if (lj.contains("branch1x1")) {
                const auto& b1 = lj["branch1x1"];
                ConvBranch cb;
                cb.weight = Tensor::from_data(Layout::WgtOIHW, {o, ic, 1, 1},
                                              load_f32_checked(dir, get_string(b1, "weight", ctx), oc * icc));
                cb.bn = bn_from_json(dir, field(b1, "bn", ctx), oc, ctx + ".branch1x1");
                b.branch1x1 = std::move(cb);
            }
            if (lj.contains("branch_id")) {
                b.branch_id = bn_from_json(dir, field(lj["branch_id"], "bn", ctx), oc, ctx + ".branch_id");
            }
            m.layers.emplace_back(std::move(b));
        } else {
            throw FormatError("manifest.json: " + ctx + ": unknown layer kind '" + kind + "'");
        }
    }

    if (j.contains("head")) {
        const auto& hj = j["head"];
        GapLinearHead h;
        h.classes = static_cast<int>(get_int(hj, "classes", "head"));
        h.features = static_cast<int>(get_int(hj, "features", "head"));
        if (h.classes <= 0 || h.features <= 0) {
            throw FormatError("manifest.json: head: classes and features must be positive");
        }
        h.weight = load_f32_checked(dir, get_string(hj, "weight", "head"),
                                    static_cast<std::size_t>(h.classes) * static_cast<std::size_t>(h.features));
        h.bias = load_f32_checked(dir, get_string(hj, "bias", "head"), static_cast<std::size_t>(h.classes));
        m.head = std::move(h);
    }

    try {
        m.validate();
    } catch (const StructuralError& e) {
        throw FormatError("manifest.json: model fails validation: " + std::string(e.what()));
    }
    return m;
}

void save_samples(const SampleSet& s, const std::filesystem::path& dir) {
    if (s.batch.empty() || s.batch.layout() != Layout::ActNCHW) {
        throw ArgumentError("save_samples: sample batch must be a non-empty NCHW tensor");
    }
    if (!s.labels.empty() && static_cast<int>(s.labels.size()) != s.count()) {
        throw ArgumentError("save_samples: label count does not match sample count");
    }
    std::filesystem::create_directories(dir);

    ordered_json j;
    j["format"] = "repq-samples";
    j["version"] = 1;
    j["endianness"] = "little";
    j["count"] = s.batch.dim(0);
    j["channels"] = s.batch.dim(1);
    j["height"] = s.batch.dim(2);
    j["width"] = s.batch.dim(3);
    j["data"] = "samples.bin";
    write_blob_f32(dir / "samples.bin", s.batch.values());
    if (!s.labels.empty()) j["labels"] = s.labels;
    write_manifest(dir, j);
}

SampleSet load_samples(const std::filesystem::path& dir) {
    const ordered_json j = parse_manifest(dir);
    check_header(j, "repq-samples");

    const int n = static_cast<int>(get_int(j, "count", "header"));
    const int c = static_cast<int>(get_int(j, "channels", "header"));
    const int h = static_cast<int>(get_int(j, "height", "header"));
    const int w = static_cast<int>(get_int(j, "width", "header"));
    if (n <= 0 || c <= 0 || h <= 0 || w <= 0) {
        throw FormatError("manifest.json: sample dimensions must be positive");
    }

    SampleSet s;
    const std::size_t volume = static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
                               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    s.batch = Tensor::from_data(Layout::ActNCHW, {n, c, h, w},
                                load_f32_checked(dir, get_string(j, "data", "header"), volume));
    if (j.contains("labels")) {
        const auto& lj = j["labels"];
        if (!lj.is_array() || static_cast<int>(lj.size()) != n) {
            throw FormatError("manifest.json: field 'labels' must list one label per sample");
        }
        s.labels.reserve(static_cast<std::size_t>(n));
        for (const auto& v : lj) {
            if (!v.is_number_integer()) throw FormatError("manifest.json: labels must be integers");
            s.labels.push_back(v.get<int>());
        }
    }
    return s;
}

} // namespace repq
