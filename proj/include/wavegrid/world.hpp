#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "wavegrid/errors.hpp"
#include "wavegrid/random.hpp"
#include "wavegrid/schedule.hpp"

namespace wavegrid {

/// A contiguous group of frames carrying latent values at one noise level.
/// Frame-major storage: values[f*dim + a] is dimension a of frame f.
struct LatentBlock {
    int index = 0;        // position in the block sequence, 0-based
    int first_frame = 0;  // absolute index of the first frame in the world
    int frames = 1;
    int dim = 1;
    Eigen::VectorXd values;
    double level = 0.0;  // time t this block currently lives at

    Eigen::Index expected_size() const { return static_cast<Eigen::Index>(frames) * dim; }

    void validate() const {
        if (frames < 1 || dim < 1 || first_frame < 0) {
            throw std::invalid_argument("LatentBlock: frames and dim must be positive");
        }
        if (values.size() != expected_size()) {
            throw std::invalid_argument("LatentBlock: values length " + std::to_string(values.size()) +
                                        " does not match frames*dim " + std::to_string(expected_size()));
        }
        if (!(level >= 0.0 && level <= 1.0)) {
            throw std::invalid_argument("LatentBlock: level must lie in [0,1]");
        }
    }

    /// Frame f as a dim-length vector view.
    Eigen::VectorXd frame(int f) const { return values.segment(static_cast<Eigen::Index>(f) * dim, dim); }
};

/// Preceding blocks presented as conditioning at one shared noise level.
struct ContextBundle {
    std::vector<LatentBlock> blocks;  // ascending block index
    double context_level = 0.0;       // t_c
    bool renoised = false;            // true if values were re-corrupted before use
    bool violates_causality = false;  // recorded when t_c exceeds the step's output level

    bool empty() const { return blocks.empty(); }

    void validate() const {
        int prev = -1;
        for (const auto& b : blocks) {
            b.validate();
            if (b.index <= prev) {
                throw std::invalid_argument("ContextBundle: block indices must be strictly increasing");
            }
            if (b.level != context_level) {
                throw std::invalid_argument("ContextBundle: all blocks must sit at the bundle level");
            }
            prev = b.index;
        }
    }
};

/// The known joint data distribution: frames_total frames of dimension dim,
/// Gaussian with an AR(1) correlation structure across frames
/// (cov[p,q] = variance * rho^|p-q|) and independence across dimensions.
struct GaussianWorld {
    int blocks = 8;
    int frames_per_block = 3;
    int dim = 4;
    double rho = 0.9;
    double variance = 1.0;
    Eigen::VectorXd mean;  // frames_total*dim, frame-major; empty means all-zero

    int frames_total() const { return blocks * frames_per_block; }

    void validate() const {
        if (blocks < 1 || frames_per_block < 1 || dim < 1) {
            throw std::invalid_argument("GaussianWorld: blocks, frames_per_block, dim must be positive");
        }
        if (!(std::abs(rho) < 1.0)) {
            throw std::invalid_argument("GaussianWorld: |rho| must be < 1 for a positive-definite covariance");
        }
        if (!(variance > 0.0)) {
            throw std::invalid_argument("GaussianWorld: variance must be positive");
        }
        if (mean.size() != 0 && mean.size() != static_cast<Eigen::Index>(frames_total()) * dim) {
            throw std::invalid_argument("GaussianWorld: mean length must be frames_total*dim");
        }
    }

    /// Covariance of the clean values across an arbitrary frame subset
    /// (shared by every dimension).
    Eigen::MatrixXd frame_covariance(const std::vector<int>& frames) const {
        const auto m = static_cast<Eigen::Index>(frames.size());
        Eigen::MatrixXd cov(m, m);
        for (Eigen::Index i = 0; i < m; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                cov(i, j) = variance * std::pow(rho, std::abs(frames[static_cast<std::size_t>(i)] -
                                                              frames[static_cast<std::size_t>(j)]));
            }
        }
        return cov;
    }

    /// Mean of frame p as a dim-length vector.
    Eigen::VectorXd frame_mean(int p) const {
        if (mean.size() == 0) {
            return Eigen::VectorXd::Zero(dim);
        }
        return mean.segment(static_cast<Eigen::Index>(p) * dim, dim);
    }

    /// Means of a frame subset stacked as rows.
    Eigen::MatrixXd frame_means(const std::vector<int>& frames) const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(frames.size()), dim);
        for (std::size_t i = 0; i < frames.size(); ++i) {
            out.row(static_cast<Eigen::Index>(i)) = frame_mean(frames[i]).transpose();
        }
        return out;
    }

    std::vector<int> block_frames(int block_index) const {
        std::vector<int> out(static_cast<std::size_t>(frames_per_block));
        for (int i = 0; i < frames_per_block; ++i) {
            out[static_cast<std::size_t>(i)] = block_index * frames_per_block + i;
        }
        return out;
    }
};

inline GaussianWorld make_world(int blocks, int frames_per_block, int dim, double rho, double variance,
                                Eigen::VectorXd mean = {}) {
    GaussianWorld w{blocks, frames_per_block, dim, rho, variance, std::move(mean)};
    w.validate();
    return w;
}

/// Draws one clean sample of the whole world, returned as per-block latents
/// at level 0. Deterministic given the seed.
inline std::vector<LatentBlock> sample_clean(const GaussianWorld& world, std::uint64_t seed) {
    world.validate();
    const int F = world.frames_total();
    std::vector<int> all(static_cast<std::size_t>(F));
    for (int i = 0; i < F; ++i) all[static_cast<std::size_t>(i)] = i;

    Eigen::LLT<Eigen::MatrixXd> llt(world.frame_covariance(all));
    if (llt.info() != Eigen::Success) {
        throw numerical_error("sample_clean: frame covariance is not positive definite");
    }
    auto rng = seeded_rng(seed, kStreamSampleClean);
    Eigen::MatrixXd z = normal_matrix(rng, F, world.dim);
    Eigen::MatrixXd sample = llt.matrixL() * z;  // F x dim
    for (int p = 0; p < F; ++p) {
        sample.row(p) += world.frame_mean(p).transpose();
    }

    std::vector<LatentBlock> out;
    out.reserve(static_cast<std::size_t>(world.blocks));
    for (int n = 0; n < world.blocks; ++n) {
        LatentBlock b;
        b.index = n;
        b.first_frame = n * world.frames_per_block;
        b.frames = world.frames_per_block;
        b.dim = world.dim;
        b.level = 0.0;
        b.values.resize(b.expected_size());
        for (int f = 0; f < b.frames; ++f) {
            b.values.segment(static_cast<Eigen::Index>(f) * world.dim, world.dim) =
                sample.row(b.first_frame + f).transpose();
        }
        out.push_back(std::move(b));
    }
    return out;
}

/// Forward corruption (1-sigma_t) * x0 + sigma_t * eps with fresh noise.
inline LatentBlock corrupt(const LatentBlock& x0, double t, const NoiseSchedule& schedule, std::uint64_t seed) {
    x0.validate();
    if (x0.level != 0.0) {
        throw invalid_state_error("corrupt: input block must be clean (level 0)");
    }
    const double s = sigma(t, schedule.shift());
    auto rng = seeded_rng(seed, kStreamCorrupt);
    Eigen::VectorXd eps = normal_vector(rng, x0.values.size());
    LatentBlock out = x0;
    out.values = (1.0 - s) * x0.values + s * eps;
    out.level = t;
    return out;
}

}  // namespace wavegrid
