#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "wavegrid/denoiser.hpp"
#include "wavegrid/errors.hpp"
#include "wavegrid/generate.hpp"
#include "wavegrid/random.hpp"
#include "wavegrid/schedule.hpp"

namespace wavegrid {

/// The three additive terms of a context built from an erroneous prediction
/// x0 + delta presented at noise level t_c:
///   signal (1-sigma) x0  +  bias (1-sigma) delta  +  noise sigma eta.
/// The signal and bias coefficients are equal by construction; the noise
/// coefficient is complementary.
struct ErrorDecomposition {
    double signal_coeff = 0.0;
    double bias_coeff = 0.0;
    double noise_coeff = 0.0;
    Eigen::VectorXd signal;
    Eigen::VectorXd bias;
    Eigen::VectorXd noise;

    /// Term sum in the fixed order (signal + bias) + noise; the canonical
    /// context construction uses the same expression, so this is bit-equal
    /// to it for the same eta draw.
    Eigen::VectorXd reconstructed() const { return (signal + bias) + noise; }
};

inline ErrorDecomposition decompose_context(const Eigen::VectorXd& x0_true, const Eigen::VectorXd& delta, double t_c,
                                            double shift, std::uint64_t seed) {
    if (x0_true.size() != delta.size()) {
        throw std::invalid_argument("decompose_context: x0 and delta lengths differ");
    }
    const double s = sigma(t_c, shift);
    auto rng = seeded_rng(seed, kStreamContextNoise);
    ErrorDecomposition out;
    out.signal_coeff = 1.0 - s;
    out.bias_coeff = 1.0 - s;
    out.noise_coeff = s;
    out.signal = (1.0 - s) * x0_true;
    out.bias = (1.0 - s) * delta;
    out.noise = s * normal_vector(rng, x0_true.size());
    return out;
}

/// Canonical renoised-context construction; shares its arithmetic with
/// decompose_context so decomposition tests reconstruct it exactly.
inline Eigen::VectorXd build_context_values(const Eigen::VectorXd& x0_true, const Eigen::VectorXd& delta, double t_c,
                                            double shift, std::uint64_t seed) {
    return decompose_context(x0_true, delta, t_c, shift, seed).reconstructed();
}

/// Produces a denoiser for a given injected-bias scale; scale 0 must return
/// the unperturbed baseline.
using DenoiserFactory = std::function<std::shared_ptr<const Denoiser>(double delta_scale)>;

struct PropagationRow {
    ContextPolicy policy;
    std::uint64_t seed = 0;
    double downstream_error = 0.0;  // norm over blocks 1..N-1 at the final level
};

/// Paired-seed propagation study: runs each policy with and without the
/// injected bias under identical draws and reports the downstream
/// final-level error on every block after the first.
inline std::vector<PropagationRow> propagation_curve(const DenoiserFactory& factory, const GaussianWorld& world,
                                                     const NoiseSchedule& schedule,
                                                     const std::vector<ContextPolicy>& policies, double delta_scale,
                                                     std::span<const std::uint64_t> seeds, int window = -1) {
    std::vector<PropagationRow> rows;
    rows.reserve(policies.size() * seeds.size());
    auto baseline = factory(0.0);
    auto injected = factory(delta_scale);
    for (ContextPolicy policy : policies) {
        for (std::uint64_t seed : seeds) {
            auto run = [&](const Denoiser& d) {
                return policy == ContextPolicy::CleanZero
                           ? generate_block_first(d, world, schedule, policy, world.blocks, seed, window)
                           : generate_hierarchical(d, world, schedule, policy, world.blocks, seed, window);
            };
            GenerationGrid with = run(*injected);
            GenerationGrid without = run(*baseline);
            const int last = schedule.steps();
            double sq = 0.0;
            for (int n = 1; n < world.blocks; ++n) {
                sq += (with.cell(n, last).values - without.cell(n, last).values).squaredNorm();
            }
            rows.push_back({policy, seed, std::sqrt(sq)});
        }
    }
    return rows;
}

inline const std::vector<std::string>& drift_metric_names() {
    static const std::vector<std::string> names = {"mean_abs_intensity", "laplacian_variance", "cosine_similarity",
                                                   "squared_distance"};
    return names;
}

/// Per-metric segment statistics, linear-fit slopes and the weighted
/// aggregate drift score over five temporal segments.
struct DriftReport {
    struct Metric {
        std::string name;
        std::array<double, 5> segment_values{};
        double slope = 0.0;
        double normaliser = 1.0;
        double normalised_slope = 0.0;
        double weight = 0.25;
    };
    std::vector<Metric> metrics;
    double aggregate = 0.0;
};

namespace detail {

inline double least_squares_slope(std::span<const double> values) {
    // segment indices 1..5: mean 3, squared deviation sum 10
    double acc = 0.0;
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
        acc += (static_cast<double>(i + 1) - 3.0) * (values[i] - mean);
    }
    return acc / 10.0;
}

}  // namespace detail

/// Drift metric suite on a frame sequence: the sequence is split into five
/// equal segments (trailing remainder dropped) and four per-segment
/// statistics are fit with a line over the segment index. The aggregate is
/// the weighted sum of absolute normalised slopes.
///
/// Statistics: mean absolute intensity (saturation proxy), variance of the
/// discrete Laplacian along the dimension axis (sharpness proxy), mean
/// consecutive-frame cosine similarity and mean consecutive-frame squared
/// distance (coherence proxies).
inline DriftReport drift_score(const std::vector<Eigen::VectorXd>& frames,
                               std::vector<double> weights = {0.25, 0.25, 0.25, 0.25},
                               std::vector<double> normalisers = {}, double normaliser_epsilon = 1e-8) {
    if (frames.size() < 5) {
        throw std::invalid_argument("drift_score: need at least 5 frames for 5 segments");
    }
    if (weights.size() != 4) {
        throw std::invalid_argument("drift_score: expected one weight per metric (4)");
    }
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    if (std::abs(wsum - 1.0) > 1e-9) {
        throw std::invalid_argument("drift_score: weights must sum to 1");
    }
    if (!normalisers.empty() && normalisers.size() != 4) {
        throw std::invalid_argument("drift_score: expected one normaliser per metric (4)");
    }

    const std::size_t seg = frames.size() / 5;
    std::array<std::array<double, 5>, 4> stats{};
    for (int s = 0; s < 5; ++s) {
        const std::size_t lo = static_cast<std::size_t>(s) * seg;
        const std::size_t hi = lo + seg;
        double sat = 0.0;
        double lap = 0.0;
        for (std::size_t f = lo; f < hi; ++f) {
            sat += frames[f].cwiseAbs().mean();
            if (frames[f].size() >= 3) {
                const auto& v = frames[f];
                const Eigen::Index m = v.size() - 2;
                Eigen::VectorXd lapv = v.head(m) - 2.0 * v.segment(1, m) + v.tail(m);
                lap += (lapv.array() - lapv.mean()).square().mean();
            }
        }
        sat /= static_cast<double>(seg);
        lap /= static_cast<double>(seg);
        double cos = 0.0;
        double sq = 0.0;
        if (seg >= 2) {
            for (std::size_t f = lo; f + 1 < hi; ++f) {
                const double na = frames[f].norm();
                const double nb = frames[f + 1].norm();
                cos += (na > 0.0 && nb > 0.0) ? frames[f].dot(frames[f + 1]) / (na * nb) : 0.0;
                sq += (frames[f + 1] - frames[f]).squaredNorm();
            }
            cos /= static_cast<double>(seg - 1);
            sq /= static_cast<double>(seg - 1);
        }
        stats[0][static_cast<std::size_t>(s)] = sat;
        stats[1][static_cast<std::size_t>(s)] = lap;
        stats[2][static_cast<std::size_t>(s)] = cos;
        stats[3][static_cast<std::size_t>(s)] = sq;
    }

    DriftReport report;
    for (std::size_t m = 0; m < 4; ++m) {
        DriftReport::Metric metric;
        metric.name = drift_metric_names()[m];
        metric.segment_values = stats[m];
        metric.slope = detail::least_squares_slope(stats[m]);
        metric.normaliser = normalisers.empty() ? std::abs(stats[m][0]) + normaliser_epsilon : normalisers[m];
        metric.normalised_slope = metric.slope / metric.normaliser;
        metric.weight = weights[m];
        report.aggregate += metric.weight * std::abs(metric.normalised_slope);
        report.metrics.push_back(std::move(metric));
    }
    return report;
}

/// Mean frame-to-frame displacement magnitude, the motion-diversity proxy:
/// mean over consecutive pairs of |f_{i+1} - f_i| / sqrt(dim).
inline double dynamics(const std::vector<Eigen::VectorXd>& frames) {
    if (frames.size() < 2) {
        throw std::invalid_argument("dynamics: need at least 2 frames");
    }
    const double root_d = std::sqrt(static_cast<double>(frames.front().size()));
    double acc = 0.0;
    for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        if (frames[i + 1].size() != frames[i].size()) {
            throw std::invalid_argument("dynamics: frames must share one dimension");
        }
        acc += (frames[i + 1] - frames[i]).norm() / root_d;
    }
    return acc / static_cast<double>(frames.size() - 1);
}

inline double pearson(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size() || xs.size() < 2) {
        throw std::invalid_argument("pearson: need two equal-length series of at least 2 points");
    }
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw undefined_correlation_error("pearson: zero variance in at least one series");
    }
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace wavegrid
