#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "repq/errors.hpp"
#include "repq/quant.hpp"
#include "repq/rng.hpp"
#include "testutil.hpp"

using namespace repq;

namespace {

// Scalar reference in extended precision. Same contract as quantize but a
// separately written code path.
std::int64_t oracle_code(float x, float scale, int bits) {
    const long double lo = -(static_cast<long double>(std::int64_t{1} << (bits - 1)));
    const long double hi = -lo - 1.0L;
    long double r = std::nearbyintl(static_cast<long double>(x) / static_cast<long double>(scale));
    if (r < lo) r = lo;
    if (r > hi) r = hi;
    return static_cast<std::int64_t>(r);
}

std::vector<float> mixed_values(std::size_t count, std::uint64_t seed, double half_range) {
    SeededRng rng(seed);
    std::vector<float> x(count);
    for (std::size_t i = 0; i < count; ++i) {
        switch (i % 3) {
        case 0: x[i] = static_cast<float>(rng.uniform(-half_range, half_range)); break;
        case 1: x[i] = static_cast<float>(rng.gaussian(0.0, half_range / 3.0)); break;
        // values parked close to code boundaries, where rounding decisions live
        default:
            x[i] = static_cast<float>((rng.uniform_int(-120, 120) + 0.5) * 0.01 +
                                      rng.gaussian(0.0, 1e-4));
        }
    }
    return x;
}

} // namespace

TEST_CASE("quantize agrees with an extended-precision scalar reference") {
    const auto x = mixed_values(100000, 410, 2.0);
    const QuantParams configs[] = {{0.01f, 8}, {0.037f, 8}, {0.00125f, 16}, {0.5f, 4}};
    for (const auto& p : configs) {
        CAPTURE(p.scale);
        CAPTURE(p.bits);
        const auto q = quantize(x, p);
        std::size_t mismatches = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (q[i] != oracle_code(x[i], p.scale, p.bits)) ++mismatches;
        }
        CHECK(mismatches == 0);
    }
}

TEST_CASE("dequantize reproduces code times scale exactly") {
    const auto x = mixed_values(20000, 411, 2.0);
    const QuantParams p{0.013f, 8};
    const auto q = quantize(x, p);
    const auto dq = dequantize(q, p);
    std::size_t mismatches = 0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        const float want = static_cast<float>(static_cast<long double>(q[i]) *
                                              static_cast<long double>(p.scale));
        if (dq[i] != want) ++mismatches;
    }
    CHECK(mismatches == 0);
}

TEST_CASE("reconstruction error stays within half a step for in-range values") {
    const auto x = mixed_values(100000, 412, 1.2);
    const QuantParams p{0.01f, 8};
    const auto q = quantize(x, p);
    const long double s = p.scale;
    long double worst = 0.0L;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (q[i] == p.qmin() || q[i] == p.qmax()) continue; // possibly clipped
        const long double err = std::fabs(static_cast<long double>(x[i]) -
                                          static_cast<long double>(q[i]) * s);
        worst = std::max(worst, err);
    }
    CHECK(static_cast<double>(worst) <= static_cast<double>(s) * (0.5 + 1e-9));
}

TEST_CASE("fixed quantizer examples") {
    const QuantParams p{0.01f, 8};

    const std::vector<float> zero = {0.0f};
    CHECK(quantize(zero, p)[0] == 0);

    const std::vector<float> big = {2.0f, -2.0f};
    const auto q = quantize(big, p);
    CHECK(q[0] == 127);
    CHECK(q[1] == -128);

    const std::vector<std::int32_t> top = {127};
    CHECK(dequantize(top, p)[0] == 1.27f);
}

TEST_CASE("rounding is half to even") {
    CHECK(round_half_even(0.5) == 0.0);
    CHECK(round_half_even(1.5) == 2.0);
    CHECK(round_half_even(2.5) == 2.0);
    CHECK(round_half_even(3.5) == 4.0);
    CHECK(round_half_even(-0.5) == 0.0);
    CHECK(round_half_even(-1.5) == -2.0);
    CHECK(round_half_even(-2.5) == -2.0);

    const QuantParams unit{1.0f, 8};
    const std::vector<float> ties = {0.5f, 1.5f, 2.5f, -1.5f, -2.5f};
    const auto q = quantize(ties, unit);
    CHECK(q[0] == 0);
    CHECK(q[1] == 2);
    CHECK(q[2] == 2);
    CHECK(q[3] == -2);
    CHECK(q[4] == -2);
}

TEST_CASE("minmax_scale picks max over the quantizer ceiling") {
    const std::vector<float> a = {1.27f, -0.4f, 0.9f};
    CHECK(minmax_scale(a, 8).scale == 1.27f / 127.0f);

    const std::vector<float> b = {-127.0f, 64.0f};
    CHECK(minmax_scale(b, 8).scale == 1.0f);

    const std::vector<float> zeros(16, 0.0f);
    const QuantParams pz = minmax_scale(zeros, 8);
    CHECK(pz.scale == kDegenerateScale);
    const auto qz = quantize(zeros, pz);
    for (auto c : qz) CHECK(c == 0);
    for (float v : dequantize(qz, pz)) CHECK(v == 0.0f);
}

TEST_CASE("quantizer input validation") {
    const std::vector<float> x = {1.0f};

    CHECK_THROWS_AS(quantize(x, QuantParams{0.01f, 1}), ArgumentError);
    CHECK_THROWS_AS(quantize(x, QuantParams{0.01f, 33}), ArgumentError);
    CHECK_THROWS_AS(quantize(x, QuantParams{0.0f, 8}), ArgumentError);
    CHECK_THROWS_AS(quantize(x, QuantParams{-0.5f, 8}), ArgumentError);
    CHECK_THROWS_AS(quantize(x, QuantParams{std::numeric_limits<float>::quiet_NaN(), 8}),
                    ArgumentError);

    const std::vector<float> bad = {std::numeric_limits<float>::infinity()};
    CHECK_THROWS_AS(quantize(bad, QuantParams{0.01f, 8}), NumericError);

    const std::vector<std::int32_t> outside = {128};
    CHECK_THROWS_AS(dequantize(outside, QuantParams{0.01f, 8}), ArgumentError);
    const std::vector<std::int32_t> below = {-129};
    CHECK_THROWS_AS(dequantize(below, QuantParams{0.01f, 8}), ArgumentError);

    CHECK_THROWS_AS(minmax_scale({}, 8), ArgumentError);
    CHECK_THROWS_AS(minmax_scale(x, 1), ArgumentError);
    const std::vector<float> nanv = {std::numeric_limits<float>::quiet_NaN()};
    CHECK_THROWS_AS(minmax_scale(nanv, 8), NumericError);
}

TEST_CASE("fake_quantize is quantize followed by dequantize") {
    const auto x = mixed_values(5000, 413, 1.5);
    const QuantParams p = minmax_scale(x, 8);
    const auto direct = fake_quantize(x, p);
    const auto staged = dequantize(quantize(x, p), p);
    CHECK(direct == staged);

    Tensor t = Tensor::from_data(Layout::WgtOIHW, {5, 10, 10, 10},
                                 std::vector<float>(x.begin(), x.begin() + 5000));
    Tensor ft = fake_quantize(t, p);
    CHECK(ft.layout() == t.layout());
    CHECK(ft.dims() == t.dims());
    CHECK(std::vector<float>(ft.values().begin(), ft.values().end()) == direct);
}
