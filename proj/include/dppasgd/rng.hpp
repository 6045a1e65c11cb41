#pragma once
// Counter-based random streams.
//
// A stream is identified by (root seed, device, iteration, purpose) and its
// state is a pure function of that key, so any device/iteration can be
// replayed in any order or on any thread and yield the same draws.

#include <cstdint>
#include <limits>
#include <random>

namespace dppasgd {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

enum class StreamPurpose : std::uint64_t {
    Batch = 1,
    Noise = 2,
    Probe = 3,
    Shuffle = 4,
    Split = 5,
};

// Satisfies UniformRandomBitGenerator; usable with <random> distributions.
class Stream {
   public:
    using result_type = std::uint64_t;

    explicit Stream(std::uint64_t key) : counter_(key) {}

    static Stream derive(std::uint64_t root, std::uint64_t device, std::uint64_t iteration,
                         StreamPurpose purpose) {
        std::uint64_t k = splitmix64(root);
        k = splitmix64(k ^ device);
        k = splitmix64(k ^ iteration);
        k = splitmix64(k ^ static_cast<std::uint64_t>(purpose));
        return Stream(k);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() {
        counter_ += 0x9E3779B97F4A7C15ull;
        std::uint64_t z = counter_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform integer in [0, n) by Lemire's multiply-shift with rejection.
    std::uint64_t below(std::uint64_t n) {
        __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (low < threshold) {
                m = static_cast<__uint128_t>((*this)()) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Uniform real in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

   private:
    std::uint64_t counter_;
};

}  // namespace dppasgd
