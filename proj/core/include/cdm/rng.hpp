#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace cdm {

// Deterministic random source used everywhere numbers are drawn.
//
// Generator: xoshiro256** (Blackman & Vigna), state seeded from a single
// 64-bit value via splitmix64. Uniform doubles take the top 53 bits; normal
// draws use the Box-Muller transform over that uniform stream. Identical
// seeds therefore yield bit-identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64();

    // Uniform in [0, 1).
    double uniform();

    // Uniform in (0, 1]; never returns zero (safe under log()).
    double uniform_open();

    // Standard normal via Box-Muller. Pairs are generated together and the
    // second value is cached, so draws always consume uniforms in a fixed order.
    double normal();

    std::vector<double> normal_vec(std::size_t n);

    // Uniform integer in [0, n), n >= 1. Rejection sampling keeps it unbiased.
    std::uint64_t below(std::uint64_t n);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        if (items.size() < 2) return;
        for (std::size_t i = items.size() - 1; i > 0; --i) {
            std::size_t j = static_cast<std::size_t>(below(i + 1));
            std::swap(items[i], items[j]);
        }
    }

private:
    std::array<std::uint64_t, 4> state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// splitmix64 step; also used for seed derivation.
std::uint64_t splitmix64(std::uint64_t& state);

// FNV-1a over a byte string.
std::uint64_t fnv1a64(std::string_view bytes);

// Sub-seed rule used by the pipeline: derive_seed(g, label) =
// splitmix64(g XOR fnv1a64(label)). Stage reruns with the same global seed
// and label always see the same stream, independent of other stages.
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view label);

}  // namespace cdm
