#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "aiq/agents.hpp"
#include "aiq/machine.hpp"
#include "aiq/sampler.hpp"

namespace aiq {

inline constexpr double kZ95 = 1.96;

enum class TrialStatus { ok, step_limit, agent_protocol_error, agent_timeout, agent_exit };

std::string_view to_string(TrialStatus status);
TrialStatus trial_status_from_string(std::string_view text);

struct TrialOptions {
    int episodes = 1000;            // T, cycles per trial
    std::optional<double> discount; // geometric discount factor; off when empty

    friend bool operator==(const TrialOptions&, const TrialOptions&) = default;
};

/// Score of one trial. In undiscounted mode the value is the mean reward per
/// cycle; with discounting it is (1 - g) * sum g^(t-1) r_t, stopping once the
/// remaining reward bound 100 g^t / (1 - g) drops below 0.5.
struct EpisodeScore {
    TrialStatus status = TrialStatus::ok;
    double value = 0.0;
    int cycles = 0;

    bool ok() const { return status == TrialStatus::ok; }
};

EpisodeScore run_trial(Agent& agent, const Program& program, const TrialOptions& options,
                       std::uint64_t trial_seed, const MachineConfig& config);

/// Antithetic pair: the same code with negate off and on, both runs sharing
/// environment and agent seeds.
struct PairScore {
    TrialStatus status = TrialStatus::ok;
    double score0 = 0.0;
    double score1 = 0.0;

    bool ok() const { return status == TrialStatus::ok; }
    double mean() const { return (score0 + score1) / 2; }
};

PairScore run_pair(Agent& agent, const Program& program, const TrialOptions& options,
                   std::uint64_t pair_seed, const MachineConfig& config);

/// Streaming mean and sum of squared deviations.
struct StratumStats {
    std::uint64_t n = 0;
    double mean = 0.0;
    double m2 = 0.0;

    void push(double x) {
        ++n;
        const double d = x - mean;
        mean += d / static_cast<double>(n);
        m2 += d * (x - mean);
    }

    /// Unbiased sample variance; 0 when n < 2.
    double variance() const { return n < 2 ? 0.0 : m2 / static_cast<double>(n - 1); }
    double sd() const;

    friend bool operator==(const StratumStats&, const StratumStats&) = default;
};

/// Exact pooled statistics of the union of both samples.
StratumStats merge_stats(const StratumStats& a, const StratumStats& b);

struct StratumRow {
    int id = 0;
    std::string predicate;
    double mass = 1.0;
    std::uint64_t n = 0;
    double mean = 0.0;
    double sd = 0.0;

    friend bool operator==(const StratumRow&, const StratumRow&) = default;
};

struct Estimate {
    double mean = 0.0;
    double std_error = 0.0;
    double ci_halfwidth = 0.0;
    std::uint64_t n = 0;
    std::uint64_t discards = 0;
    std::vector<StratumRow> strata;

    double lower() const { return mean - ci_halfwidth; }
    double upper() const { return mean + ci_halfwidth; }

    friend bool operator==(const Estimate&, const Estimate&) = default;
};

/// One trial-log record; `agent` is empty except in comparisons.
struct TrialRecord {
    std::uint64_t slot = 0;
    int stratum = 0;
    std::string agent;
    std::string program;
    double score0 = 0.0;
    double score1 = 0.0;
    TrialStatus status = TrialStatus::ok;

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

// ---------------------------------------------------------------------------
// Sampling driver

/// Outcome of evaluating one sample slot, discards included.
struct SlotResult {
    double value = 0.0;
    std::vector<double> extras;  // side quantities, e.g. per-agent means
    std::size_t program_length = 0;
    std::uint64_t discards = 0;
    std::vector<TrialRecord> records;
};

/// Evaluates slot `slot` of stratum index `stratum` on worker `worker`.
using SlotEvaluator =
    std::function<SlotResult(std::size_t worker, std::size_t stratum, std::uint64_t slot)>;

struct CompletedSlot {
    std::size_t stratum = 0;
    std::uint64_t slot = 0;
    double value = 0.0;
    std::vector<double> extras;
    std::size_t program_length = 0;
    std::uint64_t discards = 0;

    friend bool operator==(const CompletedSlot&, const CompletedSlot&) = default;
};

/// Everything needed to continue a run from a round barrier.
struct SamplingState {
    std::uint64_t rounds = 0;
    std::vector<StratumStats> stats;
    std::vector<std::uint64_t> next_slot;
    std::vector<StratumStats> extra_stats;
    std::vector<CompletedSlot> completed;
    std::vector<TrialRecord> log;
    std::uint64_t discards = 0;

    std::uint64_t pairs() const { return completed.size(); }

    std::string to_json() const;
    static SamplingState from_json(std::string_view text);

    friend bool operator==(const SamplingState&, const SamplingState&) = default;
};

struct SamplingPlan {
    std::vector<double> weights;  // stratum masses, summing to 1
    std::uint64_t budget = 0;     // N, completed pairs
    std::uint64_t batch = 0;      // B, pairs per adaptive round (0 = default)
    int workers = 1;
};

/// Default round size: a tenth of the budget, at least 4 per stratum.
std::uint64_t default_batch(std::uint64_t budget, std::size_t strata);

/// Splits `size` pairs across strata in proportion to weight * max(sd, 1e-6),
/// giving each stratum at least one pair when size allows; remainders go by
/// largest fractional part, ties to the lower index.
std::vector<std::uint64_t> allocate_round(std::uint64_t size, const std::vector<double>& weights,
                                          const std::vector<double>& sds);

/// Pairs per stratum in the warm-up round.
std::uint64_t warmup_per_stratum(std::uint64_t budget, std::size_t strata);

/// Called at each round barrier with the state so far; returning false stops
/// the run early (the state is then incomplete but resumable).
using BarrierHook = std::function<bool(const SamplingState&)>;

/// Runs warm-up and adaptive rounds until the budget is spent. `resume_from`
/// continues an interrupted run. Returns the final (or interrupted) state.
SamplingState run_sampling(const SamplingPlan& plan, const SlotEvaluator& evaluate,
                           std::optional<SamplingState> resume_from = std::nullopt,
                           const BarrierHook& on_barrier = {});

/// Stratified estimate from per-stratum statistics.
Estimate summarize(const SamplingState& state, const std::vector<double>& weights);

// ---------------------------------------------------------------------------
// AIQ estimation

struct EvalConfig {
    MachineConfig machine;
    ScreenOptions screening;
    TrialOptions trial;
    std::uint64_t master_seed = 1;
    int workers = 1;
    std::uint64_t batch = 0;
    std::uint64_t max_discards_per_slot = 100'000;
};

using AgentFactory = std::function<std::unique_ptr<Agent>()>;

/// Resume point and barrier callback passed through to run_sampling.
struct SamplingControl {
    std::optional<SamplingState> resume_from;
    BarrierHook on_barrier;
};

AgentFactory factory_for(const AgentSpec& spec);

/// Trial seed of attempt `attempt` at slot `slot` in stream `stream`.
std::uint64_t slot_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t slot,
                        std::uint64_t attempt);

/// Evaluator drawing programs from `table` (or from the unconditioned prior
/// when `table` is null) and scoring antithetic pairs.
SlotEvaluator make_pair_evaluator(const AgentFactory& agent, const StratumTable* table,
                                  const EvalConfig& config);

/// Paired evaluator for two agents on common programs and seeds. The value is
/// mean_b - mean_a; extras are {mean_a, mean_b}.
SlotEvaluator make_comparison_evaluator(const AgentFactory& agent_a, const AgentFactory& agent_b,
                                        const EvalConfig& config);

/// Plain Monte Carlo over the prior with antithetic pairs. N >= 2.
Estimate simple_mc(const AgentFactory& agent, std::uint64_t pairs, const EvalConfig& config,
                   SamplingState* state_out = nullptr, SamplingControl control = {});

/// Adaptive stratified sampling over `table`. N >= 10 * k.
Estimate adaptive_stratified(const AgentFactory& agent, const StratumTable& table,
                             std::uint64_t pairs, const EvalConfig& config,
                             SamplingState* state_out = nullptr, SamplingControl control = {});

struct ComparisonResult {
    Estimate delta;  // agent_b - agent_a
    double mean_a = 0.0;
    double stderr_a = 0.0;
    double mean_b = 0.0;
    double stderr_b = 0.0;
    std::vector<double> differences;  // per program, in slot order

    friend bool operator==(const ComparisonResult&, const ComparisonResult&) = default;
};

ComparisonResult compare_crn(const AgentFactory& agent_a, const AgentFactory& agent_b,
                             std::uint64_t pairs, const EvalConfig& config,
                             SamplingState* state_out = nullptr, SamplingControl control = {});

ComparisonResult comparison_from_state(const SamplingState& state);

/// Deterministic parallel loop: f(worker, i) for i in [0, n). Exceptions are
/// rethrown on the calling thread after all workers stop.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t worker, std::size_t i)>& f);

}  // namespace aiq
