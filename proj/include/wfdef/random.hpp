// random.hpp

#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

namespace wfdef {

/// Portable uniform draws on top of mt19937_64; the standard distributions
/// are implementation-defined and would make corpora differ between
/// standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_{seed} {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// integer in [lo, hi]
    std::int64_t integer(std::int64_t lo, std::int64_t hi) {
        const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(engine_() % span);
    }

    std::uint64_t next() { return engine_(); }

    template <typename It>
    void shuffle(It first, It last) {
        for (auto n = last - first; n > 1; --n) {
            auto j = static_cast<decltype(n)>(engine_() % static_cast<std::uint64_t>(n));
            std::iter_swap(first + n - 1, first + j);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace wfdef
