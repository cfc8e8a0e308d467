#include "jam/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "jam/error.hpp"

namespace jam {

std::uint64_t Rng::uniform_int(std::uint64_t n) {
    if (n == 0) throw DomainError("Rng::uniform_int: empty range");
    // Rejection sampling keeps the result unbiased.
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
}

std::int64_t Rng::uniform_range(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw DomainError("Rng::uniform_range: hi < lo");
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(uniform_int(span));
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

}  // namespace jam
