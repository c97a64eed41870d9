#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>

#include "repq/cfws.hpp"
#include "repq/model.hpp"

namespace repq {

enum class WeightScheme { MinMax, Cfws };

const char* to_string(WeightScheme s);
WeightScheme weight_scheme_from_string(const std::string& s);

// One quantized 3x3 conv layer. Weights are stored as integer codes under
// either a single min-max scale or the dual-scale center/surround form; the
// bias stays float32. `act` is the quantizer applied to this layer's output
// activations.
struct QuantConvLayer {
    WeightScheme scheme = WeightScheme::MinMax;
    int weight_bits = 8;
    std::array<int, 4> weight_dims{0, 0, 0, 0};
    std::vector<std::int32_t> codes; // MinMax scheme
    float weight_scale = 1.0f;       // MinMax scheme
    std::optional<CFWSWeights> cfws; // Cfws scheme
    std::vector<float> bias;
    int stride = 1;
    bool relu = true;
    QuantParams act;

    Tensor dequantized_weight() const;
    void validate() const;
};

struct QuantizedModel {
    int input_channels = 0;
    int input_height = 0;
    int input_width = 0;
    std::vector<QuantConvLayer> layers;
    std::optional<GapLinearHead> head; // kept in float32

    int layer_count() const { return static_cast<int>(layers.size()); }
    void validate() const;
};

// Quantizes every conv layer of a fused model. act_scales must hold one entry
// per layer (as produced by calibrate_network).
QuantizedModel quantize_model(const RepModel& fused, WeightScheme scheme, int bits,
                              const std::map<int, QuantParams>& act_scales);

// Simulated integer forward pass: integer weights are dequantized, each
// layer's output is rectified, then rounded onto its activation grid. The
// captured map holds the layer outputs before ReLU and before the activation
// quantizer.
ForwardResult qforward(const QuantizedModel& m, const Tensor& x,
                       const std::set<int>& capture = {});

// Same directory convention as the float model: manifest.json plus blobs.
// Integer codes are stored little-endian two's-complement, 8-bit for depths
// up to 8, 16-bit up to 16, 32-bit beyond.
void save_quantized_model(const QuantizedModel& m, const std::filesystem::path& dir);
QuantizedModel load_quantized_model(const std::filesystem::path& dir);

} // namespace repq
