#pragma once

#include <cstdint>
#include <vector>

#include "sipit/matrix.hpp"

namespace sipit {

// Counter-based deterministic generator: draw i is a fixed integer mix of
// (seed, i), so identical seeds give identical streams on every platform.
// Gaussians come from the Box-Muller transform of consecutive uniforms
// (one spare cached), a fixed deterministic mapping of the uniform stream.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t next_u64();

    // Uniform on [0,1), 53-bit resolution.
    double uniform();
    // Uniform on (0,1]; safe as a log/ratio argument.
    double uniform_pos();
    double gaussian();
    double gaussian(double mean, double std);

    // Uniform integer in [0, n); rejection sampling, bias-free.
    std::uint32_t below(std::uint32_t n);

    // Fisher-Yates permutation of 0..n-1.
    std::vector<std::int32_t> permutation(std::int32_t n);

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// rows×cols matrix of i.i.d. N(mean, std²) draws, row-major draw order.
Matrix gaussian_matrix(Rng& rng, std::size_t rows, std::size_t cols, double std,
                       double mean = 0.0);

}  // namespace sipit
