#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace repq {

// Seeded random source. The distributions are implemented by hand instead of
// going through std:: distribution objects because those are allowed to differ
// between standard library versions, and generated artifacts have to be
// bit-identical for a given seed.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : gen_(seed) {}

    // uniform double in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // uniform integer in [lo, hi], both ends included
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(gen_() % span);
    }

    // standard normal via Box-Muller, one cached value per pair
    double gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925286766559;
        spare_ = r * std::sin(two_pi * u2);
        have_spare_ = true;
        return r * std::cos(two_pi * u2);
    }

    double gaussian(double mean, double stddev) {
        return mean + stddev * gaussian();
    }

    void fill_gaussian(std::span<float> out, double mean, double stddev) {
        for (float& v : out) v = static_cast<float>(gaussian(mean, stddev));
    }

    void fill_uniform(std::span<float> out, double lo, double hi) {
        for (float& v : out) v = static_cast<float>(uniform(lo, hi));
    }

private:
    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace repq
