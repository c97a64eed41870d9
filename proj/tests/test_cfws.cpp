#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "repq/cfws.hpp"
#include "repq/errors.hpp"
#include "repq/quant.hpp"
#include "repq/rng.hpp"
#include "repq/tensor.hpp"
#include "testutil.hpp"

using namespace repq;
using testutil::max_rel_deviation;
using testutil::random_tensor;

namespace {

double recon_mse(const Tensor& w, const Tensor& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double d = static_cast<double>(w.values()[i]) - static_cast<double>(r.values()[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(w.size());
}

double minmax_mse(const Tensor& w, int bits) {
    const QuantParams p = minmax_scale(w.values(), bits);
    const Tensor r = fake_quantize(w, p);
    return recon_mse(w, r);
}

// Kernel with the center drawn from a wider range than the surround.
Tensor center_dominant_kernel(SeededRng& rng, int o, int i, double surround_half,
                              double center_lo, double center_hi) {
    Tensor w(Layout::WgtOIHW, {o, i, 3, 3});
    rng.fill_uniform(w.values(), -surround_half, surround_half);
    for (int oc = 0; oc < o; ++oc) {
        for (int ic = 0; ic < i; ++ic) {
            const double mag = rng.uniform(center_lo, center_hi);
            w.at(oc, ic, 1, 1) = static_cast<float>(rng.uniform() < 0.5 ? -mag : mag);
        }
    }
    return w;
}

} // namespace

TEST_CASE("cfws_split partitions the kernel") {
    SeededRng rng(420);
    Tensor w = random_tensor(rng, Layout::WgtOIHW, {4, 3, 3, 3});
    auto [center, surround] = cfws_split(w);

    REQUIRE(center.dims() == std::array<int, 4>{4, 3, 1, 1});
    REQUIRE(surround.dims() == w.dims());
    for (int o = 0; o < 4; ++o) {
        for (int i = 0; i < 3; ++i) {
            CHECK(center.at(o, i, 0, 0) == w.at(o, i, 1, 1));
            CHECK(surround.at(o, i, 1, 1) == 0.0f);
            for (int ky = 0; ky < 3; ++ky) {
                for (int kx = 0; kx < 3; ++kx) {
                    if (ky == 1 && kx == 1) continue;
                    CHECK(surround.at(o, i, ky, kx) == w.at(o, i, ky, kx));
                }
            }
        }
    }

    Tensor bad1x1(Layout::WgtOIHW, {4, 3, 1, 1});
    CHECK_THROWS_AS(cfws_split(bad1x1), ShapeError);
    Tensor act(Layout::ActNCHW, {1, 3, 3, 3});
    CHECK_THROWS_AS(cfws_split(act), ShapeError);
}

TEST_CASE("hand-worked single kernel") {
    // Center 2.54, surround topping out at 0.4. The coarse step lands the
    // center on a code boundary almost exactly; the fine scale only has to
    // cover the surround.
    Tensor w(Layout::WgtOIHW, {1, 1, 3, 3});
    const float surround[8] = {0.11f, -0.23f, 0.31f, -0.4f, 0.37f, -0.13f, 0.19f, -0.29f};
    int k = 0;
    for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
            w.at(0, 0, ky, kx) = (ky == 1 && kx == 1) ? 2.54f : surround[k++];
        }
    }

    const CFWSWeights c = cfws_quantize(w, 8);
    CHECK(std::fabs(c.coarse_scale - 0.02f) <= 0.02f * 1e-6f);
    CHECK(c.coarse[0] == 127);
    CHECK(std::fabs(c.fine_scale - 0.4f / 127.0f) <= (0.4f / 127.0f) * 1e-5f);
    CHECK(c.fine[4] == 0); // center residual is far below one fine step

    const Tensor r = cfws_dequantize(c);
    CHECK(std::fabs(r.at(0, 0, 1, 1) - 2.54f) <= 1e-6f);

    // A single shared scale would have to stretch to 2.54 and lose the
    // surround resolution.
    CHECK(recon_mse(w, r) < minmax_mse(w, 8));
}

TEST_CASE("scale formulas match an extended-precision oracle") {
    SeededRng rng(421);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor w = center_dominant_kernel(rng, 6, 4, 0.5, 1.0, 3.0);
        const int bits = (trial % 2 == 0) ? 8 : 6;
        const CFWSWeights c = cfws_quantize(w, bits);
        const long double levels = static_cast<long double>((1 << (bits - 1)) - 1);

        long double center_max = 0.0L;
        for (int o = 0; o < 6; ++o) {
            for (int i = 0; i < 4; ++i) {
                center_max = std::max(center_max,
                                      std::fabs(static_cast<long double>(w.at(o, i, 1, 1))));
            }
        }
        const float coarse_want = static_cast<float>(center_max / levels);
        CHECK(std::fabs(c.coarse_scale - coarse_want) <=
              std::fabs(std::nextafter(coarse_want, 2.0f * coarse_want) - coarse_want));

        // Rebuild the union tensor: surround plus the coarse rounding residual
        // in the center slots.
        long double union_max = 0.0L;
        for (int o = 0; o < 6; ++o) {
            for (int i = 0; i < 4; ++i) {
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        long double v = static_cast<long double>(w.at(o, i, ky, kx));
                        if (ky == 1 && kx == 1) {
                            const std::size_t idx = static_cast<std::size_t>(o) * 4 + i;
                            v -= static_cast<long double>(c.coarse[idx]) *
                                 static_cast<long double>(c.coarse_scale);
                        }
                        union_max = std::max(union_max, std::fabs(v));
                    }
                }
            }
        }
        const float fine_want = static_cast<float>(union_max / levels);
        CHECK(std::fabs(c.fine_scale - fine_want) <=
              std::fabs(std::nextafter(fine_want, 2.0f * fine_want) - fine_want));
    }
}

TEST_CASE("center-dominant kernels reconstruct better than one shared scale") {
    SeededRng rng(422);
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Tensor w = center_dominant_kernel(rng, 8, 8, 0.5, 1.5, 3.0);
        const Tensor r = cfws_dequantize(cfws_quantize(w, 8));
        if (recon_mse(w, r) < minmax_mse(w, 8)) ++wins;
    }
    CHECK(wins >= 19);
}

TEST_CASE("kernels whose centers equal their surround lose nothing") {
    // Each 3x3 slice holds one repeated value, so the coarse and fine ranges
    // coincide with the plain minmax range and the two-stage path reduces to
    // the single-stage one.
    SeededRng rng(423);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor w(Layout::WgtOIHW, {6, 6, 3, 3});
        for (int o = 0; o < 6; ++o) {
            for (int i = 0; i < 6; ++i) {
                const float v = static_cast<float>(rng.uniform(-1.0, 1.0));
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) w.at(o, i, ky, kx) = v;
                }
            }
        }
        const CFWSWeights c = cfws_quantize(w, 8);
        CHECK(c.fine_scale == doctest::Approx(minmax_scale(w.values(), 8).scale).epsilon(1e-6));
        const Tensor r = cfws_dequantize(c);
        CHECK(recon_mse(w, r) <= minmax_mse(w, 8) + 1e-15);
    }
}

TEST_CASE("kernels without center dominance stay close to one shared scale") {
    SeededRng rng(427);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor w(Layout::WgtOIHW, {6, 6, 3, 3});
        rng.fill_uniform(w.values(), -1.0, 1.0);
        const Tensor r = cfws_dequantize(cfws_quantize(w, 8));
        // Grid alignment luck moves the ratio a few percent either way.
        CHECK(recon_mse(w, r) <= minmax_mse(w, 8) * 1.2);
    }
}

TEST_CASE("reconstruction error falls as bits increase") {
    SeededRng rng(424);
    const int ladder[] = {4, 6, 8, 16};
    for (int trial = 0; trial < 5; ++trial) {
        Tensor w = center_dominant_kernel(rng, 8, 4, 0.6, 1.2, 2.5);
        double prev = std::numeric_limits<double>::infinity();
        for (int bits : ladder) {
            const double mse = recon_mse(w, cfws_dequantize(cfws_quantize(w, bits)));
            CHECK(mse <= prev);
            prev = mse;
        }
    }
}

TEST_CASE("cfws_conv equals convolving the dequantized kernel") {
    SeededRng rng(425);
    struct Case {
        int stride, pad;
    };
    const Case cases[] = {{1, 1}, {2, 1}, {1, 0}, {2, 0}};
    Tensor w = center_dominant_kernel(rng, 5, 3, 0.5, 1.0, 2.0);
    const CFWSWeights c = cfws_quantize(w, 8);
    std::vector<float> bias(5);
    rng.fill_gaussian(bias, 0.0, 0.5);

    for (const auto& cs : cases) {
        CAPTURE(cs.stride);
        CAPTURE(cs.pad);
        Tensor x = random_tensor(rng, Layout::ActNCHW, {2, 3, 9, 9});
        Tensor via_paths = cfws_conv(x, c, bias, cs.stride, cs.pad);
        Tensor via_kernel = conv2d(x, cfws_dequantize(c), bias, cs.stride, cs.pad);
        REQUIRE(via_paths.dims() == via_kernel.dims());
        CHECK(max_rel_deviation(via_paths.values(), via_kernel.values()) <= 1e-5);
    }

    const std::vector<float> bias_short = {0.0f};
    CHECK_THROWS_AS(cfws_conv(random_tensor(rng, Layout::ActNCHW, {1, 3, 5, 5}), c,
                              bias_short, 1, 1),
                    ShapeError);
}

TEST_CASE("all-zero kernel degenerates cleanly") {
    Tensor w(Layout::WgtOIHW, {2, 2, 3, 3});
    const CFWSWeights c = cfws_quantize(w, 8);
    CHECK(c.coarse_scale == kDegenerateScale);
    CHECK(c.fine_scale == kDegenerateScale);
    for (auto code : c.coarse) CHECK(code == 0);
    for (auto code : c.fine) CHECK(code == 0);
    const Tensor r = cfws_dequantize(c);
    for (float v : r.values()) CHECK(v == 0.0f);
}

TEST_CASE("cfws weight validation") {
    SeededRng rng(426);
    Tensor w = center_dominant_kernel(rng, 2, 2, 0.5, 1.0, 2.0);
    CFWSWeights ok = cfws_quantize(w, 8);
    CHECK_NOTHROW(ok.validate());

    CFWSWeights bad = ok;
    bad.out_channels = 0;
    CHECK_THROWS_AS(bad.validate(), ShapeError);

    bad = ok;
    bad.fine.pop_back();
    CHECK_THROWS_AS(bad.validate(), ShapeError);

    bad = ok;
    bad.coarse_scale = -1.0f;
    CHECK_THROWS_AS(bad.validate(), ArgumentError);

    bad = ok;
    bad.coarse[0] = 999;
    CHECK_THROWS_AS(bad.validate(), NumericError);

    bad = ok;
    bad.fine[3] = -200;
    CHECK_THROWS_AS(bad.validate(), NumericError);
}
