#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace forensic {

/// Seeded generator whose draws are identical on every platform.
///
/// std::mt19937_64 output is fixed by the standard, but the standard
/// distributions are not, so bounded draws are done here by rejection.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Uniform integer in [0, n). n must be positive.
    std::size_t below(std::size_t n);

    // Uniform double in [0, 1).
    double unit();

    // k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::swap(items[i - 1], items[below(i)]);
        }
    }

private:
    std::mt19937_64 engine_;
};

}  // namespace forensic
