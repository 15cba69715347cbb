#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Core>

namespace wavegrid {

// Stream tags keep draws for different purposes statistically and
// reproducibly separated even when they share one user-facing seed.
inline constexpr std::uint64_t kStreamSampleClean = 0x01;
inline constexpr std::uint64_t kStreamInitNoise = 0x02;
inline constexpr std::uint64_t kStreamCorrupt = 0x03;
inline constexpr std::uint64_t kStreamContextNoise = 0x04;

namespace detail {

// splitmix64 finalizer; decorrelates (seed, tag) pairs before seeding.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

inline std::mt19937_64 seeded_rng(std::uint64_t seed, std::uint64_t stream_tag) {
    return std::mt19937_64(detail::mix64(detail::mix64(seed) ^ stream_tag));
}

inline Eigen::VectorXd normal_vector(std::mt19937_64& rng, Eigen::Index n) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        out[i] = normal(rng);
    }
    return out;
}

inline Eigen::MatrixXd normal_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd out(rows, cols);
    // row-major fill: frame index varies slowest
    for (Eigen::Index r = 0; r < rows; ++r) {
        for (Eigen::Index c = 0; c < cols; ++c) {
            out(r, c) = normal(rng);
        }
    }
    return out;
}

}  // namespace wavegrid
