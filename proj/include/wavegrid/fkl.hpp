#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/LU>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "wavegrid/analysis.hpp"
#include "wavegrid/denoiser.hpp"
#include "wavegrid/errors.hpp"
#include "wavegrid/generate.hpp"
#include "wavegrid/schedule.hpp"
#include "wavegrid/world.hpp"

namespace wavegrid {

/// A dense reference denoising trajectory of the whole sequence, with the
/// subsequence at the coarse schedule times marked as checkpoints. The
/// dense grid is built to contain the schedule times exactly, so
/// checkpoints never interpolate.
struct TeacherTrajectory {
    std::vector<double> times;            // dense, strictly decreasing, 1 -> 0
    std::vector<Eigen::VectorXd> states;  // full-sequence state at each time
    std::vector<int> checkpoint_indices;  // positions of the schedule times

    int checkpoints() const { return static_cast<int>(checkpoint_indices.size()); }
    double checkpoint_time(int i) const { return times.at(static_cast<std::size_t>(checkpoint_indices.at(static_cast<std::size_t>(i)))); }
    const Eigen::VectorXd& checkpoint_state(int i) const {
        return states.at(static_cast<std::size_t>(checkpoint_indices.at(static_cast<std::size_t>(i))));
    }
};

enum class TeacherMode { Bidirectional, Causal };

namespace detail {

/// Dense times subdividing each schedule interval, allocated proportionally
/// to interval length (largest remainder, at least one per interval) so the
/// schedule times appear exactly. dense_steps == S reproduces the schedule.
inline std::vector<double> dense_times(const NoiseSchedule& schedule, int dense_steps) {
    const int S = schedule.steps();
    if (dense_steps < S) {
        throw std::invalid_argument("dense_times: dense step count must be at least the schedule's step count");
    }
    std::vector<int> alloc(static_cast<std::size_t>(S), 1);
    int remaining = dense_steps - S;
    std::vector<double> lengths(static_cast<std::size_t>(S));
    for (int j = 0; j < S; ++j) {
        lengths[static_cast<std::size_t>(j)] = schedule.time(j) - schedule.time(j + 1);
    }
    while (remaining > 0) {
        // give the next substep to the interval with the widest current spacing
        int best = 0;
        double widest = 0.0;
        for (int j = 0; j < S; ++j) {
            const double spacing = lengths[static_cast<std::size_t>(j)] / alloc[static_cast<std::size_t>(j)];
            if (spacing > widest) {
                widest = spacing;
                best = j;
            }
        }
        ++alloc[static_cast<std::size_t>(best)];
        --remaining;
    }
    std::vector<double> times;
    times.reserve(static_cast<std::size_t>(dense_steps) + 1);
    for (int j = 0; j < S; ++j) {
        const double hi = schedule.time(j);
        const double lo = schedule.time(j + 1);
        const int sub = alloc[static_cast<std::size_t>(j)];
        times.push_back(hi);
        for (int i = 1; i < sub; ++i) {
            times.push_back(hi + (lo - hi) * static_cast<double>(i) / sub);
        }
    }
    times.push_back(0.0);
    return times;
}

}  // namespace detail

/// Samples a dense reference trajectory from the exact world model.
///
/// Bidirectional mode treats every state as a deterministic image of the
/// trajectory's initial noise, so the exact conditional velocity is fixed
/// by one joint evaluation at the start and the trajectory integrates it
/// straight to the posterior mean given that noise. Causal mode runs the
/// step-first sweep on the dense schedule and concatenates each level's
/// blocks into a full-sequence state.
inline TeacherTrajectory sample_teacher_trajectory(const GaussianWorld& world, const NoiseSchedule& schedule,
                                                   int dense_steps, TeacherMode mode, std::uint64_t seed,
                                                   OracleOptions oracle_options = {}) {
    world.validate();
    TeacherTrajectory traj;
    traj.times = detail::dense_times(schedule, dense_steps);
    const auto dense = NoiseSchedule(schedule.shift(), traj.times);
    const int n_dense = dense.steps();

    if (mode == TeacherMode::Bidirectional) {
        OracleDenoiser oracle(world, schedule.shift(), oracle_options);
        LatentBlock state;
        state.index = 0;
        state.first_frame = 0;
        state.frames = world.frames_total();
        state.dim = world.dim;
        state.level = 1.0;
        {
            auto init = detail::draw_initial_noise(world, world.blocks, seed);
            state.values.resize(static_cast<Eigen::Index>(state.frames) * state.dim);
            Eigen::Index off = 0;
            for (const auto& b : init) {
                state.values.segment(off, b.values.size()) = b.values;
                off += b.values.size();
            }
        }
        const Eigen::VectorXd v = oracle.velocity(state, 1.0, ContextBundle{});
        traj.states.reserve(static_cast<std::size_t>(n_dense) + 1);
        traj.states.push_back(state.values);
        for (int i = 0; i < n_dense; ++i) {
            traj.states.push_back(euler_step(traj.states.back(), v, dense.sigma_at(i), dense.sigma_at(i + 1)));
        }
    } else {
        OracleDenoiser oracle(world, schedule.shift(), oracle_options);
        GenerationGrid grid = generate_hierarchical(oracle, world, dense, ContextPolicy::OutputLevel, world.blocks,
                                                    seed);
        traj.states.reserve(static_cast<std::size_t>(n_dense) + 1);
        for (int j = 0; j <= n_dense; ++j) {
            Eigen::VectorXd state(static_cast<Eigen::Index>(world.frames_total()) * world.dim);
            Eigen::Index off = 0;
            for (int n = 0; n < world.blocks; ++n) {
                const auto& vals = grid.cell(n, j).values;
                state.segment(off, vals.size()) = vals;
                off += vals.size();
            }
            traj.states.push_back(std::move(state));
        }
    }

    for (int j = 0; j < schedule.levels(); ++j) {
        const double t = schedule.time(j);
        const auto it = std::find(traj.times.begin(), traj.times.end(), t);
        if (it == traj.times.end()) {
            throw invariant_violation("sample_teacher_trajectory: dense grid lost a schedule time");
        }
        traj.checkpoint_indices.push_back(static_cast<int>(it - traj.times.begin()));
    }
    return traj;
}

/// Trajectory-matching loss against consecutive checkpoint pairs,
/// restricted to the first `constrained_steps` of the schedule. The
/// reduction is the mean over elements and over constrained steps.
inline double fkl_loss(const Denoiser& student, const TeacherTrajectory& trajectory, const NoiseSchedule& schedule,
                       int constrained_steps) {
    if (constrained_steps < 1 || constrained_steps > schedule.steps()) {
        throw std::invalid_argument("fkl_loss: constrained step count must lie in [1, S]");
    }
    if (trajectory.checkpoints() != schedule.levels()) {
        throw std::invalid_argument("fkl_loss: trajectory checkpoints do not match the schedule");
    }
    double acc = 0.0;
    for (int i = 0; i < constrained_steps; ++i) {
        const double t_i = trajectory.checkpoint_time(i);
        const double t_next = trajectory.checkpoint_time(i + 1);
        const double dsig = sigma(t_next, schedule.shift()) - sigma(t_i, schedule.shift());
        if (dsig == 0.0) {
            throw std::invalid_argument("fkl_loss: degenerate sigma difference between checkpoints");
        }
        const Eigen::VectorXd& x_i = trajectory.checkpoint_state(i);
        const Eigen::VectorXd target = (trajectory.checkpoint_state(i + 1) - x_i) / dsig;

        LatentBlock block;
        block.index = 0;
        block.first_frame = 0;
        block.dim = 1;
        block.frames = static_cast<int>(x_i.size());
        block.values = x_i;
        block.level = t_i;
        const Eigen::VectorXd v = student.velocity(block, t_i, ContextBundle{});
        if (v.size() != target.size()) {
            throw std::invalid_argument("fkl_loss: student velocity length does not match the state");
        }
        acc += (v - target).squaredNorm() / static_cast<double>(target.size());
    }
    return acc / static_cast<double>(constrained_steps);
}

/// Caller-supplied distribution-matching term plus the weighted
/// trajectory-matching regulariser.
inline double total_loss(double dmd_term, double fkl_term, double lambda) {
    if (lambda < 0.0) {
        throw std::invalid_argument("total_loss: lambda must be non-negative");
    }
    if (!std::isfinite(dmd_term) || !std::isfinite(fkl_term)) {
        throw std::invalid_argument("total_loss: terms must be finite");
    }
    return dmd_term + lambda * fkl_term;
}

/// Per-step affine velocity model fit to checkpoint finite differences by
/// ridge-regularised least squares. Evaluates on full-sequence states at
/// exact schedule times with empty context.
class LinearStudent : public Denoiser {
public:
    LinearStudent(NoiseSchedule schedule, std::vector<Eigen::MatrixXd> step_maps)
        : schedule_(std::move(schedule)), step_maps_(std::move(step_maps)) {
        if (static_cast<int>(step_maps_.size()) != schedule_.steps()) {
            throw std::invalid_argument("LinearStudent: need one map per schedule step");
        }
    }

    Eigen::VectorXd velocity(const LatentBlock& noisy, double t, const ContextBundle& context) const override {
        if (!context.empty()) {
            throw std::invalid_argument("LinearStudent: fitted on context-free trajectories");
        }
        int step = -1;
        for (int j = 0; j < schedule_.steps(); ++j) {
            if (std::abs(schedule_.time(j) - t) <= 1e-12) {
                step = j;
                break;
            }
        }
        if (step < 0) {
            throw std::invalid_argument("LinearStudent: query time is not a schedule step time");
        }
        const Eigen::MatrixXd& map = step_maps_[static_cast<std::size_t>(step)];
        if (map.cols() != noisy.values.size() + 1) {
            throw std::invalid_argument("LinearStudent: state length does not match the fitted design");
        }
        Eigen::VectorXd features(noisy.values.size() + 1);
        features << noisy.values, 1.0;
        return map * features;
    }

    const Eigen::MatrixXd& step_map(int j) const { return step_maps_.at(static_cast<std::size_t>(j)); }

private:
    NoiseSchedule schedule_;
    std::vector<Eigen::MatrixXd> step_maps_;
};

/// Fits the per-step affine maps v_j(x) = A_j [x; 1] to the checkpoint
/// finite-difference targets across trajectories.
inline LinearStudent fit_linear_student(const GaussianWorld& world, const NoiseSchedule& schedule,
                                        std::span<const TeacherTrajectory> trajectories, double ridge) {
    if (trajectories.empty()) {
        throw std::invalid_argument("fit_linear_student: need at least one trajectory");
    }
    if (ridge < 0.0) {
        throw std::invalid_argument("fit_linear_student: ridge must be non-negative");
    }
    const Eigen::Index D = static_cast<Eigen::Index>(world.frames_total()) * world.dim;
    const int S = schedule.steps();
    const auto M = static_cast<Eigen::Index>(trajectories.size());

    std::vector<Eigen::MatrixXd> maps;
    maps.reserve(static_cast<std::size_t>(S));
    for (int j = 0; j < S; ++j) {
        Eigen::MatrixXd design(D + 1, M);   // features as columns
        Eigen::MatrixXd targets(D, M);
        for (Eigen::Index m = 0; m < M; ++m) {
            const TeacherTrajectory& traj = trajectories[static_cast<std::size_t>(m)];
            if (traj.checkpoints() != schedule.levels() || traj.checkpoint_state(j).size() != D) {
                throw std::invalid_argument("fit_linear_student: trajectory does not match world and schedule");
            }
            const double dsig = sigma(traj.checkpoint_time(j + 1), schedule.shift()) -
                                sigma(traj.checkpoint_time(j), schedule.shift());
            design.col(m) << traj.checkpoint_state(j), 1.0;
            targets.col(m) = (traj.checkpoint_state(j + 1) - traj.checkpoint_state(j)) / dsig;
        }
        Eigen::MatrixXd gram = design * design.transpose();
        gram.diagonal().array() += ridge;
        if (ridge == 0.0) {
            Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
            if (!lu.isInvertible()) {
                throw numerical_error("fit_linear_student: rank-deficient design with ridge 0; add samples or ridge");
            }
            maps.push_back(targets * design.transpose() * lu.inverse());
        } else {
            Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
            if (ldlt.info() != Eigen::Success) {
                throw numerical_error("fit_linear_student: normal-equation factorisation failed");
            }
            maps.push_back(ldlt.solve(design * targets.transpose()).transpose());
        }
    }
    return LinearStudent(schedule, std::move(maps));
}

/// Symmetric two-component Gaussian mixture 0.5 N(-a,1) + 0.5 N(+a,1), the
/// closed-form apparatus for the mode-seeking vs. mode-covering study.
struct MixtureToy {
    double separation = 3.0;  // a >= 0

    double log_density(double x) const {
        const double l1 = -0.5 * (x - separation) * (x - separation);
        const double l2 = -0.5 * (x + separation) * (x + separation);
        const double hi = l1 > l2 ? l1 : l2;
        return hi + std::log(0.5 * (std::exp(l1 - hi) + std::exp(l2 - hi))) -
               0.5 * std::log(2.0 * std::numbers::pi);
    }
    double density(double x) const { return std::exp(log_density(x)); }

    double mean() const { return 0.0; }
    double variance() const { return 1.0 + separation * separation; }

    void validate(double tolerance = 1e-9) const {
        if (separation < 0.0) {
            throw std::invalid_argument("MixtureToy: separation must be non-negative");
        }
        const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
            [this](double x) { return density(x); }, -(separation + 8.0), separation + 8.0, 15, 1e-12);
        if (std::abs(mass - 1.0) > tolerance) {
            throw numerical_error("MixtureToy: density mass " + std::to_string(mass) + " is not 1 within tolerance");
        }
    }
};

enum class ModeObjective { ReverseKl, ForwardKl, Combined };

inline std::string to_string(ModeObjective o) {
    switch (o) {
        case ModeObjective::ReverseKl: return "reverse_kl";
        case ModeObjective::ForwardKl: return "forward_kl";
        case ModeObjective::Combined: return "combined";
    }
    throw std::invalid_argument("to_string: unknown mode objective");
}

namespace detail {

inline double quadrature(const std::function<double(double)>& f, double lo, double hi, double tolerance) {
    double error = 0.0;
    const double value =
        boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, lo, hi, 15, tolerance, &error);
    if (!(std::isfinite(value)) || error > std::max(tolerance * 1e3, 1e-6)) {
        throw numerical_error("mode study quadrature did not converge (error estimate " + std::to_string(error) + ")");
    }
    return value;
}

}  // namespace detail

/// D_KL(q || p) for student q = N(m, v) against the mixture, by adaptive
/// quadrature of E_q[log p].
inline double reverse_kl(const MixtureToy& toy, double m, double v, double tolerance = 1e-9) {
    if (!(v > 0.0)) {
        throw std::invalid_argument("reverse_kl: student variance must be positive");
    }
    const double sd = std::sqrt(v);
    const double lo = std::min(-(toy.separation + 8.0), m - 10.0 * sd);
    const double hi = std::max(toy.separation + 8.0, m + 10.0 * sd);
    const double entropy = 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * v);
    const double cross = detail::quadrature(
        [&](double x) {
            const double z = (x - m) / sd;
            const double q = std::exp(-0.5 * z * z) / (sd * std::sqrt(2.0 * std::numbers::pi));
            return q * toy.log_density(x);
        },
        lo, hi, tolerance);
    return -entropy - cross;
}

/// D_KL(p || q): E_p[log p] by quadrature (constant in (m,v)) minus the
/// closed-form E_p[log q].
inline double forward_kl(const MixtureToy& toy, double m, double v, double tolerance = 1e-9) {
    if (!(v > 0.0)) {
        throw std::invalid_argument("forward_kl: student variance must be positive");
    }
    const double a = toy.separation;
    const double p_logp = detail::quadrature([&](double x) { return toy.density(x) * toy.log_density(x); },
                                             -(a + 8.0), a + 8.0, tolerance);
    const double second_moment_about_m = toy.variance() + m * m;  // mixture mean is 0
    const double p_logq = -0.5 * std::log(2.0 * std::numbers::pi * v) - second_moment_about_m / (2.0 * v);
    return p_logp - p_logq;
}

struct ModeOptimum {
    double m = 0.0;
    double v = 1.0;
    double value = 0.0;
};

struct ModeLandscapeCell {
    double m = 0.0;
    double v = 1.0;
    double reverse = 0.0;
    double forward = 0.0;
    double combined = 0.0;
};

struct ModeStudyResult {
    ModeObjective objective = ModeObjective::ReverseKl;
    double lambda = 0.1;
    std::vector<ModeOptimum> optima;  // ascending objective value
    std::vector<ModeLandscapeCell> landscape;
};

struct ModeStudyOptions {
    int grid_m = 81;
    int grid_v = 41;
    double lambda = 0.1;
    double tolerance = 1e-9;
    int refine_iterations = 200;
};

namespace detail {

/// Nelder-Mead on (m, log v); small and sufficient for this smooth 2-D
/// landscape.
inline ModeOptimum refine_optimum(const std::function<double(double, double)>& objective, double m0, double v0,
                                  int iterations) {
    using Point = Eigen::Vector2d;
    auto eval = [&](const Point& p) { return objective(p[0], std::exp(p[1])); };
    std::array<Point, 3> simplex = {Point(m0, std::log(v0)), Point(m0 + 0.05, std::log(v0)),
                                    Point(m0, std::log(v0) + 0.05)};
    std::array<double, 3> value = {eval(simplex[0]), eval(simplex[1]), eval(simplex[2])};
    for (int it = 0; it < iterations; ++it) {
        std::array<int, 3> order = {0, 1, 2};
        std::sort(order.begin(), order.end(), [&](int a, int b) { return value[static_cast<std::size_t>(a)] < value[static_cast<std::size_t>(b)]; });
        const Point best = simplex[static_cast<std::size_t>(order[0])];
        const Point good = simplex[static_cast<std::size_t>(order[1])];
        const Point worst = simplex[static_cast<std::size_t>(order[2])];
        const Point centroid = 0.5 * (best + good);
        const Point reflected = centroid + (centroid - worst);
        double fr = eval(reflected);
        if (fr < value[static_cast<std::size_t>(order[0])]) {
            const Point expanded = centroid + 2.0 * (centroid - worst);
            const double fe = eval(expanded);
            simplex[static_cast<std::size_t>(order[2])] = fe < fr ? expanded : reflected;
            value[static_cast<std::size_t>(order[2])] = fe < fr ? fe : fr;
        } else if (fr < value[static_cast<std::size_t>(order[1])]) {
            simplex[static_cast<std::size_t>(order[2])] = reflected;
            value[static_cast<std::size_t>(order[2])] = fr;
        } else {
            const Point contracted = centroid + 0.5 * (worst - centroid);
            const double fc = eval(contracted);
            if (fc < value[static_cast<std::size_t>(order[2])]) {
                simplex[static_cast<std::size_t>(order[2])] = contracted;
                value[static_cast<std::size_t>(order[2])] = fc;
            } else {
                for (int i : {order[1], order[2]}) {
                    simplex[static_cast<std::size_t>(i)] = best + 0.5 * (simplex[static_cast<std::size_t>(i)] - best);
                    value[static_cast<std::size_t>(i)] = eval(simplex[static_cast<std::size_t>(i)]);
                }
            }
        }
        if ((simplex[0] - simplex[1]).norm() + (simplex[0] - simplex[2]).norm() < 1e-12) {
            break;
        }
    }
    int best = 0;
    for (int i = 1; i < 3; ++i) {
        if (value[static_cast<std::size_t>(i)] < value[static_cast<std::size_t>(best)]) best = i;
    }
    return {simplex[static_cast<std::size_t>(best)][0], std::exp(simplex[static_cast<std::size_t>(best)][1]),
            value[static_cast<std::size_t>(best)]};
}

}  // namespace detail

/// Grid scan plus local refinement of the chosen objective over the student
/// family N(m, v); returns every local optimum found, best first, and the
/// full landscape for plotting.
inline ModeStudyResult mode_study(const MixtureToy& toy, ModeObjective objective, ModeStudyOptions options = {}) {
    toy.validate();
    const double a = toy.separation;

    auto value_of = [&](double m, double v) {
        switch (objective) {
            case ModeObjective::ReverseKl: return reverse_kl(toy, m, v, options.tolerance);
            case ModeObjective::ForwardKl: return forward_kl(toy, m, v, options.tolerance);
            case ModeObjective::Combined:
                return reverse_kl(toy, m, v, options.tolerance) + options.lambda * forward_kl(toy, m, v, options.tolerance);
        }
        throw std::invalid_argument("mode_study: unknown objective");
    };

    const double m_lo = -(a + 2.0), m_hi = a + 2.0;
    const double v_lo = std::log(0.05), v_hi = std::log(4.0 * (1.0 + a * a) + 1.0);
    Eigen::MatrixXd values(options.grid_m, options.grid_v);
    ModeStudyResult result;
    result.objective = objective;
    result.lambda = options.lambda;
    result.landscape.reserve(static_cast<std::size_t>(options.grid_m) * static_cast<std::size_t>(options.grid_v));
    for (int i = 0; i < options.grid_m; ++i) {
        const double m = m_lo + (m_hi - m_lo) * i / (options.grid_m - 1);
        for (int k = 0; k < options.grid_v; ++k) {
            const double v = std::exp(v_lo + (v_hi - v_lo) * k / (options.grid_v - 1));
            const double rev = reverse_kl(toy, m, v, options.tolerance);
            const double fwd = forward_kl(toy, m, v, options.tolerance);
            result.landscape.push_back({m, v, rev, fwd, rev + options.lambda * fwd});
            switch (objective) {
                case ModeObjective::ReverseKl: values(i, k) = rev; break;
                case ModeObjective::ForwardKl: values(i, k) = fwd; break;
                case ModeObjective::Combined: values(i, k) = rev + options.lambda * fwd; break;
            }
        }
    }

    // grid-local minima, each refined by Nelder-Mead and deduplicated
    std::vector<ModeOptimum> optima;
    for (int i = 0; i < options.grid_m; ++i) {
        for (int k = 0; k < options.grid_v; ++k) {
            bool is_min = true;
            for (int di = -1; di <= 1 && is_min; ++di) {
                for (int dk = -1; dk <= 1; ++dk) {
                    const int ni = i + di, nk = k + dk;
                    if ((di == 0 && dk == 0) || ni < 0 || ni >= options.grid_m || nk < 0 || nk >= options.grid_v) {
                        continue;
                    }
                    if (values(ni, nk) < values(i, k)) {
                        is_min = false;
                        break;
                    }
                }
            }
            if (!is_min) continue;
            const double m = m_lo + (m_hi - m_lo) * i / (options.grid_m - 1);
            const double v = std::exp(v_lo + (v_hi - v_lo) * k / (options.grid_v - 1));
            ModeOptimum refined = detail::refine_optimum(value_of, m, v, options.refine_iterations);
            bool duplicate = false;
            for (auto& existing : optima) {
                if (std::abs(existing.m - refined.m) < 1e-3 && std::abs(existing.v - refined.v) < 1e-3) {
                    duplicate = true;
                    if (refined.value < existing.value) existing = refined;
                    break;
                }
            }
            if (!duplicate) optima.push_back(refined);
        }
    }
    std::sort(optima.begin(), optima.end(), [](const ModeOptimum& x, const ModeOptimum& y) { return x.value < y.value; });
    result.optima = std::move(optima);
    if (result.optima.empty()) {
        throw numerical_error("mode_study: no optimum found on the search grid");
    }
    return result;
}

/// Motion measured per student under both sampling modes plus their Pearson
/// correlation across the family.
struct DynamicsCorrelation {
    std::vector<double> bidirectional;  // one entry per student
    std::vector<double> causal;
    double pearson_r = 0.0;
};

/// For each student: sample sequences in joint (bidirectional) and causal
/// step-first mode over the shared seeds, average the dynamics score per
/// mode, then correlate the two series across students.
inline DynamicsCorrelation dynamics_correlation_study(const std::vector<const Denoiser*>& students,
                                                      const GaussianWorld& world, const NoiseSchedule& schedule,
                                                      std::span<const std::uint64_t> seeds) {
    if (students.size() < 3) {
        throw std::invalid_argument("dynamics_correlation_study: need at least 3 students");
    }
    if (seeds.empty()) {
        throw std::invalid_argument("dynamics_correlation_study: need at least one seed");
    }
    DynamicsCorrelation out;
    for (const Denoiser* student : students) {
        double bi = 0.0;
        double ca = 0.0;
        for (std::uint64_t seed : seeds) {
            const LatentBlock joint = generate_bidirectional(*student, world, schedule, seed);
            std::vector<Eigen::VectorXd> frames;
            frames.reserve(static_cast<std::size_t>(joint.frames));
            for (int f = 0; f < joint.frames; ++f) frames.push_back(joint.frame(f));
            bi += dynamics(frames);

            const GenerationGrid grid =
                generate_hierarchical(*student, world, schedule, ContextPolicy::OutputLevel, world.blocks, seed);
            ca += dynamics(grid.final_frames());
        }
        out.bidirectional.push_back(bi / static_cast<double>(seeds.size()));
        out.causal.push_back(ca / static_cast<double>(seeds.size()));
    }
    out.pearson_r = pearson(out.bidirectional, out.causal);
    return out;
}

}  // namespace wavegrid
