#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "wavegrid/denoiser.hpp"
#include "wavegrid/errors.hpp"
#include "wavegrid/random.hpp"
#include "wavegrid/schedule.hpp"
#include "wavegrid/world.hpp"

namespace wavegrid {

/// Which noise level preceding blocks are presented at.
///   CleanZero:   t_c = 0, fully denoised context; block-first order only.
///   InputLevel:  t_c = t_j, the step's input level; step-first order only.
///   OutputLevel: t_c = t_{j+1}, the step's output level; step-first only.
enum class ContextPolicy { CleanZero, InputLevel, OutputLevel };

inline std::string to_string(ContextPolicy p) {
    switch (p) {
        case ContextPolicy::CleanZero: return "clean_zero";
        case ContextPolicy::InputLevel: return "input_level";
        case ContextPolicy::OutputLevel: return "output_level";
    }
    throw std::invalid_argument("to_string: unknown context policy");
}

inline ContextPolicy parse_policy(const std::string& name) {
    if (name == "clean_zero") return ContextPolicy::CleanZero;
    if (name == "input_level") return ContextPolicy::InputLevel;
    if (name == "output_level") return ContextPolicy::OutputLevel;
    throw std::invalid_argument("unknown context policy '" + name +
                                "' (expected clean_zero, input_level or output_level)");
}

/// The N x (S+1) lattice of block latents at each schedule level. Column 0
/// holds the initial noise at t=1; column S holds the final output at t=0.
class GenerationGrid {
public:
    GenerationGrid() = default;
    GenerationGrid(int blocks, std::vector<double> level_times, int frames_per_block, int dim)
        : blocks_(blocks), frames_per_block_(frames_per_block), dim_(dim), level_times_(std::move(level_times)),
          cells_(static_cast<std::size_t>(blocks) * level_times_.size()) {
        if (blocks_ < 1 || level_times_.size() < 2) {
            throw std::invalid_argument("GenerationGrid: need at least one block and two levels");
        }
    }

    int blocks() const { return blocks_; }
    int levels() const { return static_cast<int>(level_times_.size()); }
    int frames_per_block() const { return frames_per_block_; }
    int dim() const { return dim_; }
    const std::vector<double>& level_times() const { return level_times_; }
    const std::vector<std::pair<int, int>>& fill_order() const { return fill_order_; }

    bool filled(int n, int j) const { return cells_[slot(n, j)].has_value(); }

    const LatentBlock& cell(int n, int j) const {
        const auto& c = cells_[slot(n, j)];
        if (!c) {
            throw invalid_state_error("GenerationGrid: cell (" + std::to_string(n) + "," + std::to_string(j) +
                                      ") is not populated");
        }
        return *c;
    }

    void set_cell(int n, int j, LatentBlock b) {
        b.validate();
        if (j > 0 && !filled(n, j - 1)) {
            throw invalid_state_error("GenerationGrid: cell (" + std::to_string(n) + "," + std::to_string(j - 1) +
                                      ") must be populated first");
        }
        if (b.level != level_times_[static_cast<std::size_t>(j)]) {
            throw std::invalid_argument("GenerationGrid: block level does not match the column time");
        }
        auto& c = cells_[slot(n, j)];
        if (c.has_value()) {
            throw invalid_state_error("GenerationGrid: cell already populated");
        }
        c = std::move(b);
        fill_order_.emplace_back(n, j);
    }

    /// Final-level blocks flattened to a frame sequence (N*k frames of dim).
    std::vector<Eigen::VectorXd> final_frames() const {
        std::vector<Eigen::VectorXd> out;
        out.reserve(static_cast<std::size_t>(blocks_) * frames_per_block_);
        const int last = levels() - 1;
        for (int n = 0; n < blocks_; ++n) {
            const LatentBlock& b = cell(n, last);
            for (int f = 0; f < b.frames; ++f) {
                out.push_back(b.frame(f));
            }
        }
        return out;
    }

    /// Bitwise equality of populated cells, fill order and metadata.
    friend bool operator==(const GenerationGrid& a, const GenerationGrid& b) {
        if (a.blocks_ != b.blocks_ || a.level_times_ != b.level_times_ || a.frames_per_block_ != b.frames_per_block_ ||
            a.dim_ != b.dim_ || a.fill_order_ != b.fill_order_) {
            return false;
        }
        for (std::size_t i = 0; i < a.cells_.size(); ++i) {
            const auto& ca = a.cells_[i];
            const auto& cb = b.cells_[i];
            if (ca.has_value() != cb.has_value()) return false;
            if (ca && (ca->values.size() != cb->values.size() || ca->values != cb->values)) return false;
        }
        return true;
    }

    nlohmann::json to_json() const {
        nlohmann::json cells = nlohmann::json::array();
        for (const auto& [n, j] : fill_order_) {
            const LatentBlock& b = cell(n, j);
            cells.push_back({{"block", n},
                             {"level_index", j},
                             {"level", b.level},
                             {"values", std::vector<double>(b.values.begin(), b.values.end())}});
        }
        return nlohmann::json{{"blocks", blocks_},
                              {"frames_per_block", frames_per_block_},
                              {"dim", dim_},
                              {"level_times", level_times_},
                              {"cells", cells}};
    }

    static GenerationGrid from_json(const nlohmann::json& j) {
        GenerationGrid g(j.at("blocks").get<int>(), j.at("level_times").get<std::vector<double>>(),
                         j.at("frames_per_block").get<int>(), j.at("dim").get<int>());
        for (const auto& c : j.at("cells")) {
            LatentBlock b;
            b.index = c.at("block").get<int>();
            b.first_frame = b.index * g.frames_per_block_;
            b.frames = g.frames_per_block_;
            b.dim = g.dim_;
            b.level = c.at("level").get<double>();
            auto vals = c.at("values").get<std::vector<double>>();
            b.values = Eigen::Map<const Eigen::VectorXd>(vals.data(), static_cast<Eigen::Index>(vals.size()));
            g.set_cell(b.index, c.at("level_index").get<int>(), std::move(b));
        }
        return g;
    }

private:
    std::size_t slot(int n, int j) const {
        if (n < 0 || n >= blocks_ || j < 0 || j >= levels()) {
            throw std::invalid_argument("GenerationGrid: cell index out of range");
        }
        return static_cast<std::size_t>(n) * level_times_.size() + static_cast<std::size_t>(j);
    }

    int blocks_ = 0;
    int frames_per_block_ = 1;
    int dim_ = 1;
    std::vector<double> level_times_;
    std::vector<std::optional<LatentBlock>> cells_;
    std::vector<std::pair<int, int>> fill_order_;
};

/// Bounded sliding-window storage of context blocks, keyed by level index.
/// Holds at most `window` blocks per level; evicts the oldest block index.
class ContextStore {
public:
    explicit ContextStore(int window) : window_(window) {
        if (window_ < 1) {
            throw std::invalid_argument("ContextStore: window must be positive");
        }
    }

    int window() const { return window_; }

    void push(int level_index, LatentBlock block) {
        auto& q = by_level_[level_index];
        q.push_back(std::move(block));
        while (static_cast<int>(q.size()) > window_) {
            q.pop_front();
        }
    }

    /// Blocks with index < before_block at the given level, ascending index.
    std::vector<LatentBlock> retrieve(int level_index, int before_block) const {
        std::vector<LatentBlock> out;
        auto it = by_level_.find(level_index);
        if (it == by_level_.end()) return out;
        for (const auto& b : it->second) {
            if (b.index < before_block) out.push_back(b);
        }
        return out;
    }

private:
    int window_;
    std::map<int, std::deque<LatentBlock>> by_level_;
};

/// Builds the conditioning bundle for block n at step j under a policy.
/// OutputLevel and CleanZero satisfy the causality bound t_c <= t_{j+1};
/// InputLevel deliberately violates it and the bundle records that.
inline ContextBundle context_for(const GenerationGrid& grid, const ContextStore& store, ContextPolicy policy, int n,
                                 int j, const NoiseSchedule& schedule) {
    if (j < 0 || j >= schedule.steps()) {
        throw std::invalid_argument("context_for: step index out of range");
    }
    int level_index = 0;
    switch (policy) {
        case ContextPolicy::CleanZero: level_index = schedule.steps(); break;
        case ContextPolicy::InputLevel: level_index = j; break;
        case ContextPolicy::OutputLevel: level_index = j + 1; break;
    }
    ContextBundle bundle;
    bundle.context_level = schedule.time(level_index);
    bundle.renoised = false;
    bundle.blocks = store.retrieve(level_index, n);

    const int lo = std::max(0, n - store.window());
    for (int m = lo; m < n; ++m) {
        if (!grid.filled(m, level_index)) {
            throw invalid_state_error("context_for: grid cell (" + std::to_string(m) + "," +
                                      std::to_string(level_index) + ") required for context is not populated");
        }
    }
    if (static_cast<int>(bundle.blocks.size()) != n - lo) {
        throw invalid_state_error("context_for: context store is missing required blocks");
    }

    const double t_out = schedule.time(j + 1);
    bundle.violates_causality = !bundle.empty() && bundle.context_level > t_out;
    if ((policy == ContextPolicy::OutputLevel || policy == ContextPolicy::CleanZero) && bundle.violates_causality) {
        throw invariant_violation("context_for: causality bound t_c <= t_{j+1} broken under a causal policy");
    }
    bundle.validate();
    return bundle;
}

namespace detail {

/// Initial noise, one draw per block from a single stream, shared by every
/// generation order so cross-order comparisons start identically.
inline std::vector<LatentBlock> draw_initial_noise(const GaussianWorld& world, int n_blocks, std::uint64_t seed) {
    auto rng = seeded_rng(seed, kStreamInitNoise);
    std::vector<LatentBlock> out;
    out.reserve(static_cast<std::size_t>(n_blocks));
    for (int n = 0; n < n_blocks; ++n) {
        LatentBlock b;
        b.index = n;
        b.first_frame = n * world.frames_per_block;
        b.frames = world.frames_per_block;
        b.dim = world.dim;
        b.level = 1.0;
        b.values = normal_vector(rng, b.expected_size());
        out.push_back(std::move(b));
    }
    return out;
}

inline int resolve_window(int window, int n_blocks) {
    if (window == 0 || window < -1) {
        throw std::invalid_argument("context window must be positive (or -1 for unbounded)");
    }
    return window == -1 ? n_blocks : window;
}

inline void check_generation_args(const GaussianWorld& world, int n_blocks) {
    world.validate();
    if (n_blocks < 1 || n_blocks > world.blocks) {
        throw std::invalid_argument("generation: block count must lie in [1, world.blocks]");
    }
}

}  // namespace detail

/// Conventional block-first order: each block runs all S denoising steps
/// before the next block starts, conditioning every step on the fully
/// denoised predictions of earlier blocks (t_c = 0).
inline GenerationGrid generate_block_first(const Denoiser& denoiser, const GaussianWorld& world,
                                           const NoiseSchedule& schedule, ContextPolicy policy, int n_blocks,
                                           std::uint64_t seed, int window = -1) {
    if (policy != ContextPolicy::CleanZero) {
        throw std::invalid_argument("generate_block_first: requires the clean_zero context policy");
    }
    detail::check_generation_args(world, n_blocks);
    const int W = detail::resolve_window(window, n_blocks);
    const int S = schedule.steps();

    GenerationGrid grid(n_blocks, schedule.times(), world.frames_per_block, world.dim);
    ContextStore store(W);
    for (auto& b : detail::draw_initial_noise(world, n_blocks, seed)) {
        grid.set_cell(b.index, 0, std::move(b));
    }
    for (int n = 0; n < n_blocks; ++n) {
        for (int j = 0; j < S; ++j) {
            ContextBundle ctx = context_for(grid, store, policy, n, j, schedule);
            const LatentBlock& cur = grid.cell(n, j);
            Eigen::VectorXd v = denoiser.velocity(cur, schedule.time(j), ctx);
            LatentBlock next = cur;
            next.values = euler_step(cur.values, v, schedule.sigma_at(j), schedule.sigma_at(j + 1));
            next.level = schedule.time(j + 1);
            grid.set_cell(n, j + 1, next);
        }
        store.push(S, grid.cell(n, S));
    }
    return grid;
}

/// Step-first (hierarchical) order: an outer loop over denoising steps with
/// an inner causal sweep over blocks, conditioning block n on blocks < n at
/// the step's output level (OutputLevel) or input level (InputLevel).
inline GenerationGrid generate_hierarchical(const Denoiser& denoiser, const GaussianWorld& world,
                                            const NoiseSchedule& schedule, ContextPolicy policy, int n_blocks,
                                            std::uint64_t seed, int window = -1) {
    if (policy == ContextPolicy::CleanZero) {
        throw std::invalid_argument("generate_hierarchical: clean_zero context requires the block-first order");
    }
    detail::check_generation_args(world, n_blocks);
    const int W = detail::resolve_window(window, n_blocks);
    const int S = schedule.steps();

    GenerationGrid grid(n_blocks, schedule.times(), world.frames_per_block, world.dim);
    ContextStore store(W);
    for (auto& b : detail::draw_initial_noise(world, n_blocks, seed)) {
        store.push(0, b);
        grid.set_cell(b.index, 0, std::move(b));
    }
    for (int j = 0; j < S; ++j) {
        for (int n = 0; n < n_blocks; ++n) {
            ContextBundle ctx = context_for(grid, store, policy, n, j, schedule);
            const LatentBlock& cur = grid.cell(n, j);
            Eigen::VectorXd v = denoiser.velocity(cur, schedule.time(j), ctx);
            LatentBlock next = cur;
            next.values = euler_step(cur.values, v, schedule.sigma_at(j), schedule.sigma_at(j + 1));
            next.level = schedule.time(j + 1);
            store.push(j + 1, next);
            grid.set_cell(n, j + 1, std::move(next));
        }
    }
    return grid;
}

/// Joint (non-causal) sampling: the whole sequence is denoised as a single
/// block at a shared level, one evaluator call per step.
inline LatentBlock generate_bidirectional(const Denoiser& denoiser, const GaussianWorld& world,
                                          const NoiseSchedule& schedule, std::uint64_t seed) {
    detail::check_generation_args(world, world.blocks);
    auto init = detail::draw_initial_noise(world, world.blocks, seed);

    LatentBlock state;
    state.index = 0;
    state.first_frame = 0;
    state.frames = world.frames_total();
    state.dim = world.dim;
    state.level = 1.0;
    state.values.resize(static_cast<Eigen::Index>(state.frames) * state.dim);
    Eigen::Index off = 0;
    for (const auto& b : init) {
        state.values.segment(off, b.values.size()) = b.values;
        off += b.values.size();
    }

    const ContextBundle empty;
    for (int j = 0; j < schedule.steps(); ++j) {
        Eigen::VectorXd v = denoiser.velocity(state, schedule.time(j), empty);
        state.values = euler_step(state.values, v, schedule.sigma_at(j), schedule.sigma_at(j + 1));
        state.level = schedule.time(j + 1);
    }
    return state;
}

}  // namespace wavegrid
