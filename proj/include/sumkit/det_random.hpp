#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace sumkit {

// Deterministic random source. std::mt19937_64 has a standard-specified output
// sequence, but the std distributions do not, so uniform/gaussian/shuffle are
// implemented here to keep artifacts bit-identical across platforms.
class det_rng {
public:
    explicit det_rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Unbiased draw from [0, n) via masked rejection.
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        std::uint64_t mask = ~std::uint64_t{0};
        std::uint64_t limit = n - 1;
        int bits = 0;
        while (limit > 0) {
            ++bits;
            limit >>= 1;
        }
        mask = (bits >= 64) ? ~std::uint64_t{0} : ((std::uint64_t{1} << bits) - 1);
        for (;;) {
            std::uint64_t v = gen_() & mask;
            if (v < n) return v;
        }
    }

    // Uniform double in [0, 1) with 53 bits of precision.
    double uniform01() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    // Standard normal via Box-Muller with a cached spare.
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u = 1.0 - uniform01();  // avoid log(0)
        double v = uniform01();
        double r = std::sqrt(-2.0 * std::log(u));
        double theta = 2.0 * 3.14159265358979323846 * v;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        if (v.size() <= 1) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

private:
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sumkit
