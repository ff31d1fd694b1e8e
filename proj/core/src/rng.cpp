#include "mtecg/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace mtecg {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    if (n == 1) return 0;
    // Largest multiple of n that fits in 64 bits; reject draws above it.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = engine_();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    double u1;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::truncated_normal(double stddev) {
    double z;
    do {
        z = normal();
    } while (std::fabs(z) > 2.0);
    return z * stddev;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) {
        throw std::invalid_argument("Rng::set_state: malformed state string");
    }
}

} // namespace mtecg
