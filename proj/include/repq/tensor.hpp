#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "repq/errors.hpp"

namespace repq {

// Memory layout tag. Activations are batch, channel, height, width; weights
// are output channel, input channel, kernel height, kernel width.
enum class Layout { ActNCHW, WgtOIHW };

// Dense 4-D float32 tensor with a fixed row-major layout.
class Tensor {
public:
    Tensor() = default;
    Tensor(Layout layout, const std::array<int, 4>& dims);

    static Tensor from_data(Layout layout, const std::array<int, 4>& dims,
                            std::vector<float> data);

    Layout layout() const { return layout_; }
    const std::array<int, 4>& dims() const { return dims_; }
    int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    std::size_t flat(int a, int b, int c, int d) const {
        return ((static_cast<std::size_t>(a) * dims_[1] + b) * dims_[2] + c) * dims_[3] + d;
    }
    float& at(int a, int b, int c, int d) { return data_[flat(a, b, c, d)]; }
    float at(int a, int b, int c, int d) const { return data_[flat(a, b, c, d)]; }

    bool all_finite() const;
    float max_abs() const;

private:
    Layout layout_ = Layout::ActNCHW;
    std::array<int, 4> dims_{0, 0, 0, 0};
    std::vector<float> data_;
};

// Inference-time batch norm statistics and affine parameters, one entry per
// channel.
struct BatchNormParams {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float epsilon = 1e-5f;

    int channels() const { return static_cast<int>(gamma.size()); }
    void validate() const;

    // gamma = 1, beta = 0, mean = 0, var = 1
    static BatchNormParams identity(int channels);
};

// 2-D cross correlation with zero padding. Accumulation runs over input
// channels first, then kernel rows, then kernel columns, in double precision,
// so results are reproducible bit for bit.
Tensor conv2d(const Tensor& x, const Tensor& w, std::span<const float> bias,
              int stride, int pad);

// Folds batch norm into the preceding convolution. Returns the scaled weight
// tensor and the new bias.
std::pair<Tensor, std::vector<float>> fold_bn(const Tensor& w,
                                              std::span<const float> bias,
                                              const BatchNormParams& bn);

// Applies batch norm to an activation tensor channel-wise.
Tensor apply_bn(const Tensor& x, const BatchNormParams& bn);

Tensor relu(const Tensor& x);

} // namespace repq
