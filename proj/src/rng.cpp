#include "sipit/rng.hpp"

#include <cmath>

#include "sipit/errors.hpp"

namespace sipit {

namespace {

// splitmix64 finalizer: a bijective avalanche mix on 64 bits.
std::uint64_t mix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t Rng::next_u64() {
    ++counter_;
    return mix64(seed_ + counter_ * 0x9E3779B97F4A7C15ull);
}

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double Rng::gaussian() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = uniform_pos();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
}

double Rng::gaussian(double mean, double std) { return mean + std * gaussian(); }

std::uint32_t Rng::below(std::uint32_t n) {
    if (n == 0) throw DomainError("rng: below(0)");
    // Reject the tail of the 64-bit range that would bias the modulus.
    std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n + 1) % n;
    std::uint64_t x = next_u64();
    while (x > limit) x = next_u64();
    return static_cast<std::uint32_t>(x % n);
}

std::vector<std::int32_t> Rng::permutation(std::int32_t n) {
    std::vector<std::int32_t> p(static_cast<std::size_t>(n));
    for (std::int32_t i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
    for (std::int32_t i = n - 1; i > 0; --i) {
        std::uint32_t j = below(static_cast<std::uint32_t>(i) + 1);
        std::swap(p[static_cast<std::size_t>(i)], p[j]);
    }
    return p;
}

Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std, double mean) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.gaussian(mean, std);
    return m;
}

}  // namespace sipit
