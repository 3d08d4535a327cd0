#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace prop {

// Deterministic RNG wrapper. All sampling goes through explicit helpers so
// results do not depend on the standard library's distribution internals.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Uniform integer in [0, n). Modulo bias is negligible for our n.
    std::uint64_t integer(std::uint64_t n) {
        return gen_() % n;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    // Derive an independent stream (splitmix64 over the construction seed and
    // the stream id). Pure: forking never perturbs this generator, so the same
    // (seed, stream) pair always yields the same child.
    Rng fork(std::uint64_t stream) const {
        std::uint64_t z = (0x9E3779B97F4A7C15ull * (stream + 1)) ^ seed_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return Rng(z ^ (z >> 31));
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace prop
