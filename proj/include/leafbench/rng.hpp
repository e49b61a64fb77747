#pragma once

#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace leafbench {

// splitmix64 step; used for seeding and for deriving child seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Combines a seed with a stream index into an independent child seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

// FNV-1a, 64-bit. Stable across platforms and runs.
std::uint64_t stable_hash(std::string_view text);

// Maps a 64-bit hash to [0, 1).
double unit_interval(std::uint64_t bits);

/// xoshiro256** generator with portable draw helpers.
///
/// Every draw is defined here rather than through <random> distributions,
/// whose algorithms differ between standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next();

    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();
    double uniform(double low, double high);

    /// Unbiased integer in [0, bound). bound must be > 0.
    std::uint64_t below(std::uint64_t bound);

    /// Standard normal (Marsaglia polar method).
    double normal();

    template <typename T>
    void shuffle(std::vector<T>& items)
    {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            using std::swap;
            swap(items[i - 1], items[j]);
        }
    }

private:
    std::uint64_t s_[4];
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace leafbench
