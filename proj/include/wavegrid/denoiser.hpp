#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "wavegrid/errors.hpp"
#include "wavegrid/schedule.hpp"
#include "wavegrid/world.hpp"

namespace wavegrid {

/// Velocity-field evaluator: maps (noisy block, time, context) to the
/// regression target eps - x0. Implementations must be deterministic and
/// safe to call concurrently.
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Eigen::VectorXd velocity(const LatentBlock& noisy, double t, const ContextBundle& context) const = 0;
};

struct OracleOptions {
    /// Added to the observation Gram diagonal before factorisation; rho near
    /// +-1 makes the frame covariance nearly singular.
    double jitter = 1e-10;
    /// Minimum acceptable pivot ratio of the factorisation.
    double condition_floor = 1e-14;
};

/// Exact conditional-expectation denoiser for the Gaussian world.
///
/// The joint over [x0 of current+context frames; eps of the current block]
/// is Gaussian; the noisy block and each context block are linear
/// observations of it (current: (1-sigma_t) x0 + sigma_t eps, context:
/// (1-sigma_c) x0 + sigma_c eta with fresh eta). The returned velocity is
/// E[eps - x0 | observations], computed by an SPD solve in frame space and
/// broadcast over dimensions (the covariance is identity across dims).
class OracleDenoiser : public Denoiser {
public:
    OracleDenoiser(GaussianWorld world, double shift, OracleOptions options = {})
        : world_(std::move(world)), shift_(shift), options_(options) {
        world_.validate();
        if (!(shift_ > 0.0)) {
            throw std::invalid_argument("OracleDenoiser: shift must be positive");
        }
    }

    const GaussianWorld& world() const { return world_; }
    double shift() const { return shift_; }

    Eigen::VectorXd velocity(const LatentBlock& noisy, double t, const ContextBundle& context) const override {
        noisy.validate();
        context.validate();
        if (std::abs(noisy.level - t) > 1e-12) {
            throw std::invalid_argument("OracleDenoiser: block level does not match the query time");
        }
        if (!(t > 0.0 && t <= 1.0)) {
            throw std::invalid_argument("OracleDenoiser: query time must lie in (0,1]");
        }
        if (noisy.dim != world_.dim) {
            throw std::invalid_argument("OracleDenoiser: block dimension does not match the world");
        }

        const double sig_t = sigma(t, shift_);
        const double sig_c = context.empty() ? 0.0 : sigma(context.context_level, shift_);
        const int d = world_.dim;
        const int kc = noisy.frames;

        // Frame bookkeeping: current frames first, then context frames.
        std::vector<int> cur_frames(static_cast<std::size_t>(kc));
        for (int f = 0; f < kc; ++f) cur_frames[static_cast<std::size_t>(f)] = noisy.first_frame + f;
        std::vector<int> ctx_frames;
        for (const auto& b : context.blocks) {
            if (b.dim != d) {
                throw std::invalid_argument("OracleDenoiser: context dimension does not match the world");
            }
            for (int f = 0; f < b.frames; ++f) ctx_frames.push_back(b.first_frame + f);
        }
        for (int f : ctx_frames) {
            if (f >= noisy.first_frame && f < noisy.first_frame + kc) {
                throw std::invalid_argument("OracleDenoiser: context frames overlap the current block");
            }
        }

        std::vector<int> all_frames = cur_frames;
        all_frames.insert(all_frames.end(), ctx_frames.begin(), ctx_frames.end());
        const int m = static_cast<int>(all_frames.size());
        const int mc = static_cast<int>(ctx_frames.size());
        const int nu = m + kc;    // latent size: x0 frames + eps frames
        const int ny = kc + mc;   // observation rows

        // Latent covariance (frame space): blockdiag(frame cov, I_kc).
        Eigen::MatrixXd sig_u = Eigen::MatrixXd::Zero(nu, nu);
        sig_u.topLeftCorner(m, m) = world_.frame_covariance(all_frames);
        sig_u.bottomRightCorner(kc, kc).setIdentity();

        // Observation operator and noise.
        Eigen::MatrixXd obs_op = Eigen::MatrixXd::Zero(ny, nu);
        Eigen::VectorXd obs_noise = Eigen::VectorXd::Zero(ny);
        for (int i = 0; i < kc; ++i) {
            obs_op(i, i) = 1.0 - sig_t;
            obs_op(i, m + i) = sig_t;
        }
        for (int i = 0; i < mc; ++i) {
            obs_op(kc + i, kc + i) = 1.0 - sig_c;
            obs_noise[kc + i] = sig_c * sig_c;
        }

        // Observed values and their means, one column per dimension.
        Eigen::MatrixXd y(ny, d);
        for (int f = 0; f < kc; ++f) {
            y.row(f) = noisy.values.segment(static_cast<Eigen::Index>(f) * d, d).transpose();
        }
        int row = kc;
        for (const auto& b : context.blocks) {
            for (int f = 0; f < b.frames; ++f) {
                y.row(row++) = b.values.segment(static_cast<Eigen::Index>(f) * d, d).transpose();
            }
        }
        Eigen::MatrixXd mu_x0 = world_.frame_means(all_frames);  // m x d
        Eigen::MatrixXd mu_y(ny, d);
        mu_y.topRows(kc) = (1.0 - sig_t) * mu_x0.topRows(kc);
        mu_y.bottomRows(mc) = (1.0 - sig_c) * mu_x0.bottomRows(mc);

        Eigen::MatrixXd gram = obs_op * sig_u * obs_op.transpose();
        gram.diagonal() += obs_noise;
        gram.diagonal().array() += options_.jitter;

        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        if (ldlt.info() != Eigen::Success) {
            throw numerical_error("OracleDenoiser: observation Gram factorisation failed (rho near +-1?)");
        }
        const Eigen::VectorXd diag = ldlt.vectorD();
        const double dmax = diag.maxCoeff();
        const double dmin = diag.minCoeff();
        if (!(dmax > 0.0) || dmin <= dmax * options_.condition_floor) {
            throw numerical_error("OracleDenoiser: observation Gram is numerically singular (pivot ratio " +
                                  std::to_string(dmin / dmax) + "); rho near +-1 or duplicated context");
        }

        Eigen::MatrixXd solved = ldlt.solve(y - mu_y);                       // ny x d
        Eigen::MatrixXd posterior = sig_u * obs_op.transpose() * solved;     // nu x d, deviation from mean
        posterior.topRows(m) += mu_x0;                                       // eps prior mean is zero

        Eigen::VectorXd out(static_cast<Eigen::Index>(kc) * d);
        for (int f = 0; f < kc; ++f) {
            out.segment(static_cast<Eigen::Index>(f) * d, d) =
                (posterior.row(m + f) - posterior.row(f)).transpose();
        }
        return out;
    }

private:
    GaussianWorld world_;
    double shift_;
    OracleOptions options_;
};

/// Adds a fixed bias to a base denoiser's output, optionally only for one
/// block index; models a known prediction error delta.
class PerturbedDenoiser : public Denoiser {
public:
    PerturbedDenoiser(std::shared_ptr<const Denoiser> base, double bias, std::optional<int> only_block = {})
        : base_(std::move(base)), scalar_bias_(bias), only_block_(only_block) {
        if (!std::isfinite(bias)) {
            throw std::invalid_argument("PerturbedDenoiser: bias must be finite");
        }
    }
    PerturbedDenoiser(std::shared_ptr<const Denoiser> base, Eigen::VectorXd bias, std::optional<int> only_block = {})
        : base_(std::move(base)), vector_bias_(std::move(bias)), only_block_(only_block) {
        if (!vector_bias_->allFinite()) {
            throw std::invalid_argument("PerturbedDenoiser: bias must be finite");
        }
    }

    Eigen::VectorXd velocity(const LatentBlock& noisy, double t, const ContextBundle& context) const override {
        Eigen::VectorXd v = base_->velocity(noisy, t, context);
        if (only_block_ && *only_block_ != noisy.index) {
            return v;
        }
        if (vector_bias_) {
            if (vector_bias_->size() != v.size()) {
                throw std::invalid_argument("PerturbedDenoiser: bias length does not match the velocity");
            }
            return v + *vector_bias_;
        }
        return v.array() + scalar_bias_;
    }

private:
    std::shared_ptr<const Denoiser> base_;
    double scalar_bias_ = 0.0;
    std::optional<Eigen::VectorXd> vector_bias_;
    std::optional<int> only_block_;
};

/// Scales a base denoiser's velocity by a constant factor; the shrinkage
/// family used for dynamics sweeps.
class ScaledDenoiser : public Denoiser {
public:
    ScaledDenoiser(std::shared_ptr<const Denoiser> base, double factor) : base_(std::move(base)), factor_(factor) {
        if (!std::isfinite(factor)) {
            throw std::invalid_argument("ScaledDenoiser: factor must be finite");
        }
    }

    Eigen::VectorXd velocity(const LatentBlock& noisy, double t, const ContextBundle& context) const override {
        return factor_ * base_->velocity(noisy, t, context);
    }

private:
    std::shared_ptr<const Denoiser> base_;
    double factor_;
};

}  // namespace wavegrid
