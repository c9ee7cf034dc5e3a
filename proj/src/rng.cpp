#include "forensic/rng.hpp"

#include <limits>
#include <numeric>

#include "forensic/error.hpp"

namespace forensic {

std::size_t Rng::below(std::size_t n) {
    if (n == 0) {
        throw PreconditionError("Rng::below: empty range");
    }
    const std::uint64_t bound = n;
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t x = engine_();
    while (x >= limit) {
        x = engine_();
    }
    return static_cast<std::size_t>(x % bound);
}

double Rng::unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::vector<std::size_t> Rng::sample_indices(std::size_t n, std::size_t k) {
    if (k > n) {
        throw PreconditionError("Rng::sample_indices: k > n");
    }
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (std::size_t i = 0; i < k; ++i) {
        std::swap(pool[i], pool[i + below(n - i)]);
    }
    pool.resize(k);
    return pool;
}

}  // namespace forensic
