#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace downscaler {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
}  // namespace detail

/// Seeded random stream. All randomness in the library flows through this
/// type; sub-streams are derived from a master seed by hashing a path of ids
/// so parallel chains never share state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(detail::splitmix64(seed)) {}

    /// Named sub-stream, e.g. stream(master, {chain_index}) or {scenario, replicate}.
    static Rng stream(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
        std::uint64_t h = detail::splitmix64(master ^ 0x5DEECE66DULL);
        for (auto id : path) h = detail::splitmix64(h ^ detail::splitmix64(id + 0x1234567ULL));
        return Rng(h);
    }

    double normal() { return normal_(engine_); }
    double normal(double mean, double sd) { return mean + sd * normal_(engine_); }
    double uniform() { return uniform_(engine_); }

    /// Gamma with shape/scale parameterisation.
    double gamma(double shape, double scale) {
        std::gamma_distribution<double> g(shape, scale);
        return g(engine_);
    }

    /// Inverse gamma with shape a and scale b (density ∝ x^{-a-1} e^{-b/x}).
    double inverse_gamma(double shape, double scale) { return 1.0 / gamma(shape, 1.0 / scale); }

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        std::uniform_int_distribution<std::size_t> d(0, n - 1);
        return d(engine_);
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace downscaler
