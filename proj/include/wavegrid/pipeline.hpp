#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "wavegrid/errors.hpp"
#include "wavegrid/generate.hpp"
#include "wavegrid/schedule.hpp"
#include "wavegrid/world.hpp"

namespace wavegrid {

enum class PassKind { Denoise, CacheWrite, StandaloneDenoise, FusedWriteDenoise, TrailingCacheWrite };

inline std::string to_string(PassKind k) {
    switch (k) {
        case PassKind::Denoise: return "denoise";
        case PassKind::CacheWrite: return "cache_write";
        case PassKind::StandaloneDenoise: return "standalone_denoise";
        case PassKind::FusedWriteDenoise: return "fused_write_denoise";
        case PassKind::TrailingCacheWrite: return "trailing_cache_write";
    }
    throw std::invalid_argument("to_string: unknown pass kind");
}

/// One evaluator invocation within a stage. A fused pass commits block
/// `write_block`'s context and denoises `denoise_block` in a single call.
struct Pass {
    PassKind kind;
    int write_block = -1;    // block whose context this pass commits
    int denoise_block = -1;  // block this pass denoises

    bool denoises() const { return denoise_block >= 0; }
    bool writes() const { return write_block >= 0; }
};

/// Ordered pass list for one denoising stage.
struct StagePlan {
    int stage = 0;
    bool fused = false;
    std::vector<Pass> passes;
};

inline StagePlan make_stage_plan(int stage, int n_blocks, bool fused) {
    if (n_blocks < 1) {
        throw std::invalid_argument("make_stage_plan: need at least one block");
    }
    StagePlan plan{stage, fused, {}};
    if (!fused) {
        for (int n = 0; n < n_blocks; ++n) {
            plan.passes.push_back({PassKind::Denoise, -1, n});
            plan.passes.push_back({PassKind::CacheWrite, n, -1});
        }
        return plan;
    }
    plan.passes.push_back({PassKind::StandaloneDenoise, -1, 0});
    for (int n = 1; n < n_blocks; ++n) {
        plan.passes.push_back({PassKind::FusedWriteDenoise, n - 1, n});
    }
    plan.passes.push_back({PassKind::TrailingCacheWrite, n_blocks - 1, -1});
    return plan;
}

/// Per-stage pass accounting. `stated_total` is the figure reported by the
/// fused-execution description (N+2); the decomposition it lists (one
/// standalone denoise, N-1 fused passes, one trailing cache write) sums to
/// N+1, so both numbers are carried and reports show the discrepancy.
struct PassBreakdown {
    int total = 0;         // passes in the executable plan
    int stated_total = 0;  // reported per-stage figure (naive: 2N, fused: N+2)
    int denoise = 0;
    int cache_write = 0;
    int standalone_denoise = 0;
    int fused_passes = 0;
    int trailing_cache_write = 0;
};

inline PassBreakdown count_passes(int n_blocks, bool fused) {
    if (n_blocks < 1) {
        throw std::invalid_argument("count_passes: need at least one block");
    }
    PassBreakdown b;
    if (!fused) {
        b.denoise = n_blocks;
        b.cache_write = n_blocks;
        b.total = 2 * n_blocks;
        b.stated_total = 2 * n_blocks;
        return b;
    }
    b.standalone_denoise = 1;
    b.fused_passes = n_blocks - 1;
    b.trailing_cache_write = 1;
    b.total = n_blocks + 1;
    b.stated_total = n_blocks + 2;
    return b;
}

/// Anti-diagonal waves of the N x S cell grid: wave w holds every (block n,
/// stage j) with n + j == w. Cells within a wave are mutually independent.
inline std::vector<std::vector<std::pair<int, int>>> antidiagonal_schedule(int n_blocks, int stages) {
    if (n_blocks < 1 || stages < 1) {
        throw std::invalid_argument("antidiagonal_schedule: need at least one block and one stage");
    }
    std::vector<std::vector<std::pair<int, int>>> waves(static_cast<std::size_t>(n_blocks + stages - 1));
    for (int n = 0; n < n_blocks; ++n) {
        for (int j = 0; j < stages; ++j) {
            waves[static_cast<std::size_t>(n + j)].emplace_back(n, j);
        }
    }
    return waves;
}

/// Costs driving tick accounting. A pass that denoises (standalone or
/// fused) costs `pass_cost`; a pure cache-write pass costs
/// `cache_write_cost`; messages crossing a worker boundary take
/// `comm_latency` to arrive.
struct CostModel {
    double pass_cost = 1.0;
    double comm_latency = 0.0;
    double cache_write_cost = 0.0;

    double cost_of(PassKind k) const {
        switch (k) {
            case PassKind::Denoise:
            case PassKind::StandaloneDenoise:
            case PassKind::FusedWriteDenoise: return pass_cost;
            case PassKind::CacheWrite:
            case PassKind::TrailingCacheWrite: return cache_write_cost;
        }
        return 0.0;
    }

    void validate() const {
        if (!(pass_cost > 0.0) || comm_latency < 0.0 || cache_write_cost < 0.0) {
            throw std::invalid_argument("CostModel: pass_cost must be positive, latencies non-negative");
        }
    }
};

struct TraceEvent {
    double tick = 0.0;  // completion time of the pass
    int stage = 0;
    int block = 0;  // denoised block, or written block for write-only passes
    PassKind kind = PassKind::Denoise;
    int wave = 0;  // block + stage of the traced cell
};

struct StageMessage {
    int from_stage = 0;
    int to_stage = 0;
    int block = 0;
    double tick = 0.0;  // completion tick at the sender
};

/// Serialises passes on one worker: a pass starts when both the worker is
/// free and its inputs have arrived. Shared by the discrete-event simulator
/// and the threaded executor so the two cannot drift apart.
class PassScheduler {
public:
    /// Returns the completion tick.
    double run(double ready_tick, double cost) {
        const double start = clock_ > ready_tick ? clock_ : ready_tick;
        clock_ = start + cost;
        return clock_;
    }
    double clock() const { return clock_; }

private:
    double clock_ = 0.0;
};

/// Contiguous stage-to-worker assignment; workers own stage ranges.
inline int worker_of_stage(int stage, int stages, int workers) {
    return static_cast<int>((static_cast<long long>(stage) * workers) / stages);
}

namespace detail {

/// Runs the tick accounting of one stage given per-block arrival ticks.
/// Returns per-block denoise completion ticks; appends trace events.
inline std::vector<double> schedule_stage(const StagePlan& plan, const std::vector<double>& arrivals,
                                          const CostModel& cost, PassScheduler& sched, int stage,
                                          std::vector<TraceEvent>* trace) {
    std::vector<double> completion(arrivals.size(), 0.0);
    for (const Pass& p : plan.passes) {
        const double ready = p.denoises() ? arrivals[static_cast<std::size_t>(p.denoise_block)] : sched.clock();
        const double done = sched.run(ready, cost.cost_of(p.kind));
        const int traced_block = p.denoises() ? p.denoise_block : p.write_block;
        if (trace) {
            trace->push_back({done, stage, traced_block, p.kind, traced_block + stage});
        }
        if (p.denoises()) {
            completion[static_cast<std::size_t>(p.denoise_block)] = done;
        }
    }
    return completion;
}

}  // namespace detail

/// Pure tick simulation of the pipelined run (no numerics): the same plans,
/// scheduler and cost model as the threaded executor.
struct SimulatedPipeline {
    double makespan = 0.0;
    std::vector<TraceEvent> trace;
    std::vector<StageMessage> messages;
    std::vector<int> per_stage_passes;
};

inline SimulatedPipeline simulate_pipeline(int n_blocks, int stages, const CostModel& cost, bool fused,
                                           int workers = -1) {
    cost.validate();
    if (workers == -1) workers = stages;
    if (workers < 1 || workers > stages) {
        throw std::invalid_argument("simulate_pipeline: workers must lie in [1, stages]");
    }
    SimulatedPipeline sim;
    std::vector<PassScheduler> worker_clocks(static_cast<std::size_t>(workers));
    std::vector<double> arrivals(static_cast<std::size_t>(n_blocks), 0.0);
    for (int j = 0; j < stages; ++j) {
        const int w = worker_of_stage(j, stages, workers);
        const StagePlan plan = make_stage_plan(j, n_blocks, fused);
        sim.per_stage_passes.push_back(static_cast<int>(plan.passes.size()));
        std::vector<double> done = detail::schedule_stage(plan, arrivals, cost, worker_clocks[static_cast<std::size_t>(w)], j, &sim.trace);
        const bool crosses = j + 1 < stages && worker_of_stage(j + 1, stages, workers) != w;
        for (int n = 0; n < n_blocks; ++n) {
            sim.messages.push_back({j, j + 1, n, done[static_cast<std::size_t>(n)]});
            arrivals[static_cast<std::size_t>(n)] = done[static_cast<std::size_t>(n)] + (crosses ? cost.comm_latency : 0.0);
        }
    }
    for (const auto& e : sim.trace) {
        sim.makespan = sim.makespan > e.tick ? sim.makespan : e.tick;
    }
    return sim;
}

/// Result of a pipelined execution: the grid (bit-identical to the
/// sequential hierarchical sweep), tick accounting and the message log.
struct PipelineRun {
    GenerationGrid grid;
    double makespan = 0.0;
    std::vector<int> per_stage_passes;
    std::vector<StageMessage> log;  // canonical order: by tick, then stage, then block
    std::vector<TraceEvent> trace;  // stage-major, execution order per stage
};

/// Thrown when a worker fails; carries whatever the run logged before abort.
class pipeline_aborted : public std::runtime_error {
public:
    pipeline_aborted(const std::string& what, std::vector<StageMessage> partial_log)
        : std::runtime_error(what), partial_log_(std::move(partial_log)) {}
    const std::vector<StageMessage>& partial_log() const { return partial_log_; }

private:
    std::vector<StageMessage> partial_log_;
};

namespace detail {

template <typename T>
class Channel {
public:
    void send(T value) {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            queue_.push_back(std::move(value));
        }
        cv_.notify_one();
    }
    void close() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            closed_ = true;
        }
        cv_.notify_all();
    }
    std::optional<T> recv() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return !queue_.empty() || closed_; });
        if (queue_.empty()) {
            return std::nullopt;
        }
        T value = std::move(queue_.front());
        queue_.pop_front();
        return value;
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<T> queue_;
    bool closed_ = false;
};

struct BlockMessage {
    int block = 0;
    Eigen::VectorXd values;
    double level = 0.0;
    double tick = 0.0;
};

}  // namespace detail

/// Wavefront-parallel hierarchical denoising: one worker per denoising step
/// (or a contiguous stage range when workers < steps), FIFO message channels
/// between adjacent stages, no shared mutable state. Outputs are bit-equal
/// to generate_hierarchical regardless of thread interleaving.
inline PipelineRun run_pipelined(const Denoiser& denoiser, const GaussianWorld& world, const NoiseSchedule& schedule,
                                 ContextPolicy policy, int n_blocks, std::uint64_t seed, int workers = -1,
                                 const CostModel& cost = {}, bool fused_plan = false, int window = -1) {
    if (policy != ContextPolicy::OutputLevel) {
        throw std::invalid_argument("run_pipelined: the pipelined order requires the output_level policy");
    }
    detail::check_generation_args(world, n_blocks);
    cost.validate();
    const int S = schedule.steps();
    if (workers == -1) workers = S;
    if (workers < 1 || workers > S) {
        throw std::invalid_argument("run_pipelined: workers must lie in [1, steps]");
    }
    const int W = detail::resolve_window(window, n_blocks);

    auto init = detail::draw_initial_noise(world, n_blocks, seed);

    struct StageResult {
        std::vector<LatentBlock> outputs;  // column j+1 cells, block order
        std::vector<StageMessage> messages;
        std::vector<TraceEvent> trace;
        int passes = 0;
    };
    std::vector<StageResult> results(static_cast<std::size_t>(S));
    std::vector<detail::Channel<detail::BlockMessage>> channels(static_cast<std::size_t>(S));
    std::atomic<bool> abort{false};
    std::mutex error_mutex;
    std::string first_error;

    auto fail = [&](const std::string& message) {
        {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (first_error.empty()) first_error = message;
        }
        abort.store(true);
        for (auto& ch : channels) ch.close();
    };

    // Stage 0 inputs are synthesized locally by its worker (arrival tick 0).
    auto run_stage = [&](int j, PassScheduler& sched) {
        StageResult& res = results[static_cast<std::size_t>(j)];
        const StagePlan plan = make_stage_plan(j, n_blocks, fused_plan);
        res.passes = static_cast<int>(plan.passes.size());
        ContextStore store(W);
        std::vector<LatentBlock> pending(static_cast<std::size_t>(n_blocks));
        const bool crosses_in = j > 0 && worker_of_stage(j - 1, S, workers) != worker_of_stage(j, S, workers);

        auto receive = [&](int n) -> std::optional<std::pair<LatentBlock, double>> {
            if (j == 0) {
                return std::make_pair(init[static_cast<std::size_t>(n)], 0.0);
            }
            auto msg = channels[static_cast<std::size_t>(j)].recv();
            if (!msg) return std::nullopt;
            if (msg->block != n) {
                throw invariant_violation("run_pipelined: stage " + std::to_string(j) + " expected block " +
                                          std::to_string(n) + " but received " + std::to_string(msg->block));
            }
            LatentBlock b;
            b.index = n;
            b.first_frame = n * world.frames_per_block;
            b.frames = world.frames_per_block;
            b.dim = world.dim;
            b.level = msg->level;
            b.values = std::move(msg->values);
            const double arrival = msg->tick + (crosses_in ? cost.comm_latency : 0.0);
            return std::make_pair(std::move(b), arrival);
        };

        auto commit = [&](int m) { store.push(j + 1, pending[static_cast<std::size_t>(m)]); };

        auto denoise = [&](const LatentBlock& input, double arrival, PassKind kind) {
            const int n = input.index;
            ContextBundle ctx;
            ctx.context_level = schedule.time(j + 1);
            ctx.renoised = false;
            ctx.blocks = store.retrieve(j + 1, n);
            Eigen::VectorXd v = denoiser.velocity(input, schedule.time(j), ctx);
            LatentBlock next = input;
            next.values = euler_step(input.values, v, schedule.sigma_at(j), schedule.sigma_at(j + 1));
            next.level = schedule.time(j + 1);
            pending[static_cast<std::size_t>(n)] = next;
            const double done = sched.run(arrival, cost.cost_of(kind));
            res.trace.push_back({done, j, n, kind, n + j});
            res.messages.push_back({j, j + 1, n, done});
            if (j + 1 < S) {
                channels[static_cast<std::size_t>(j + 1)].send({n, next.values, next.level, done});
            }
            res.outputs.push_back(std::move(next));
        };

        for (const Pass& p : plan.passes) {
            if (abort.load()) return;
            if (p.denoises()) {
                auto got = receive(p.denoise_block);
                if (!got) return;  // aborted upstream
                if (p.writes()) commit(p.write_block);
                denoise(got->first, got->second, p.kind);
            } else {
                commit(p.write_block);
                const double done = sched.run(sched.clock(), cost.cost_of(p.kind));
                res.trace.push_back({done, j, p.write_block, p.kind, p.write_block + j});
            }
        }
    };

    std::vector<std::thread> threads;
    threads.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            PassScheduler sched;
            try {
                for (int j = 0; j < S; ++j) {
                    if (worker_of_stage(j, S, workers) == w) {
                        run_stage(j, sched);
                    }
                }
            } catch (const std::exception& e) {
                fail(e.what());
            }
        });
    }
    for (auto& t : threads) t.join();

    std::vector<StageMessage> log;
    for (const auto& r : results) {
        log.insert(log.end(), r.messages.begin(), r.messages.end());
    }
    std::sort(log.begin(), log.end(), [](const StageMessage& a, const StageMessage& b) {
        if (a.tick != b.tick) return a.tick < b.tick;
        if (a.from_stage != b.from_stage) return a.from_stage < b.from_stage;
        return a.block < b.block;
    });

    if (abort.load()) {
        throw pipeline_aborted("run_pipelined: worker failed: " + first_error, std::move(log));
    }

    PipelineRun run;
    run.grid = GenerationGrid(n_blocks, schedule.times(), world.frames_per_block, world.dim);
    for (auto& b : init) {
        run.grid.set_cell(b.index, 0, std::move(b));
    }
    for (int j = 0; j < S; ++j) {
        const auto& outs = results[static_cast<std::size_t>(j)].outputs;
        if (static_cast<int>(outs.size()) != n_blocks) {
            throw invariant_violation("run_pipelined: stage " + std::to_string(j) + " produced " +
                                      std::to_string(outs.size()) + " blocks, expected " + std::to_string(n_blocks));
        }
        for (int n = 0; n < n_blocks; ++n) {
            run.grid.set_cell(n, j + 1, outs[static_cast<std::size_t>(n)]);
        }
    }
    for (const auto& r : results) {
        run.per_stage_passes.push_back(r.passes);
        run.trace.insert(run.trace.end(), r.trace.begin(), r.trace.end());
        for (const auto& e : r.trace) {
            run.makespan = run.makespan > e.tick ? run.makespan : e.tick;
        }
    }
    run.log = std::move(log);
    return run;
}

/// Sequential vs. pipelined makespans and their ratio under a cost model,
/// for both the naive and fused pass plans.
struct SpeedupReport {
    double sequential_makespan = 0.0;  // every stage serial on one worker
    double pipelined_makespan_naive = 0.0;
    double pipelined_makespan_fused = 0.0;
    double speedup_naive = 0.0;
    double speedup_fused = 0.0;
    PassBreakdown naive_passes;
    PassBreakdown fused_passes;
    double fused_work_ratio = 0.0;  // stated fused total over naive total
};

inline SpeedupReport simulate_speedup(int n_blocks, int stages, const CostModel& cost) {
    cost.validate();
    SpeedupReport r;
    r.sequential_makespan = simulate_pipeline(n_blocks, stages, cost, false, 1).makespan;
    r.pipelined_makespan_naive = simulate_pipeline(n_blocks, stages, cost, false).makespan;
    r.pipelined_makespan_fused = simulate_pipeline(n_blocks, stages, cost, true).makespan;
    r.speedup_naive = r.sequential_makespan / r.pipelined_makespan_naive;
    // fused sequential baseline shares the naive per-stage work: the
    // conventional order has no fusion opportunity to exploit.
    r.speedup_fused = r.sequential_makespan / r.pipelined_makespan_fused;
    r.naive_passes = count_passes(n_blocks, false);
    r.fused_passes = count_passes(n_blocks, true);
    r.fused_work_ratio = static_cast<double>(r.fused_passes.stated_total) / r.naive_passes.stated_total;
    return r;
}

}  // namespace wavegrid
