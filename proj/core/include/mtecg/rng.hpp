#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace mtecg {

// Deterministic random source. mt19937_64 is fully specified by the standard,
// and all variate transforms are implemented here rather than with
// std::*_distribution (whose outputs are implementation-defined), so streams
// reproduce across toolchains. State round-trips through a string for
// checkpointing.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // Uniform integer in [0, n), n >= 1. Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    // Standard normal via Box-Muller (second variate discarded so the
    // serialized state is just the engine state).
    double normal();

    // Normal(0, std) with resampling outside +/- 2 std.
    double truncated_normal(double stddev);

    bool bernoulli(double p) { return uniform() < p; }

    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
};

} // namespace mtecg
