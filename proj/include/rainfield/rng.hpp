#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

namespace rainfield {

/// Seeded random stream with deterministic child splitting. Parallel code
/// must give each worker its own child stream so serial and threaded runs
/// produce identical output.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : base_(seed), eng_(mix(seed)) {}

    double uniform() { return unif_(eng_); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * unif_(eng_); }
    double normal() { return normal_(eng_); }
    std::uint64_t next_u64() { return eng_(); }

    /// Index into a discrete distribution given its cumulative weights.
    std::size_t categorical_from_cdf(const std::vector<double>& cdf) {
        const double u = uniform() * cdf.back();
        const auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
        return std::min<std::size_t>(it - cdf.begin(), cdf.size() - 1);
    }

    Rng child(std::uint64_t index) const {
        return Rng(mix(base_ ^ (0x9e3779b97f4a7c15ULL * (index + 1))));
    }

private:
    // splitmix64 finalizer; decorrelates nearby seeds
    static std::uint64_t mix(std::uint64_t z) {
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t base_;
    std::mt19937_64 eng_;
    std::uniform_real_distribution<double> unif_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace rainfield
