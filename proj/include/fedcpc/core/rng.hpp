#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace fedcpc {

std::uint64_t splitmix64(std::uint64_t x);

// Independent stream seeds: derive_seed(seed, a) != derive_seed(seed, b) for a != b
// with overwhelming probability, and the mapping never depends on call order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag);

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal(double mean = 0.0, double sd = 1.0) { return std::normal_distribution<double>(mean, sd)(engine_); }
    double exponential(double rate) { return std::exponential_distribution<double>(rate)(engine_); }
    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }

    std::mt19937_64& engine() { return engine_; }

    template <class It>
    void shuffle(It first, It last) {
        // Fisher-Yates with our own index draw; std::shuffle is implementation-defined.
        auto n = static_cast<std::size_t>(last - first);
        for (std::size_t i = n; i > 1; --i) {
            std::size_t j = index(i);
            std::swap(first[i - 1], first[j]);
        }
    }

private:
    std::mt19937_64 engine_;
};

} // namespace fedcpc
