#include "aiq/estimator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace aiq {

std::string_view to_string(TrialStatus status) {
    switch (status) {
        case TrialStatus::ok: return "ok";
        case TrialStatus::step_limit: return "step_limit";
        case TrialStatus::agent_protocol_error: return "agent_protocol_error";
        case TrialStatus::agent_timeout: return "agent_timeout";
        case TrialStatus::agent_exit: return "agent_exit";
    }
    return "unknown";
}

TrialStatus trial_status_from_string(std::string_view text) {
    for (auto s : {TrialStatus::ok, TrialStatus::step_limit, TrialStatus::agent_protocol_error,
                   TrialStatus::agent_timeout, TrialStatus::agent_exit}) {
        if (to_string(s) == text) return s;
    }
    throw std::invalid_argument("unknown trial status '" + std::string(text) + "'");
}

namespace {

TrialStatus status_of(AgentFailure f) {
    switch (f) {
        case AgentFailure::protocol_error: return TrialStatus::agent_protocol_error;
        case AgentFailure::timeout: return TrialStatus::agent_timeout;
        case AgentFailure::child_exit: return TrialStatus::agent_exit;
    }
    return TrialStatus::agent_protocol_error;
}

}  // namespace

EpisodeScore run_trial(Agent& agent, const Program& program, const TrialOptions& options,
                       std::uint64_t trial_seed, const MachineConfig& config) {
    if (options.episodes < 1) throw std::invalid_argument("episodes must be >= 1");
    EpisodeScore score;
    try {
        agent.reset(config.num_symbols, config.obs_cells, derive_seed(trial_seed, SeedRole::agent));
    } catch (const AgentError& e) {
        score.status = status_of(e.failure());
        return score;
    }
    Rng env_rng(derive_seed(trial_seed, SeedRole::environment));
    MachineState state;
    ActionHistory history;
    CyclePercept cycle;
    Percept percept;
    const Percept* last = nullptr;

    const bool discounted = options.discount.has_value();
    const double gamma = options.discount.value_or(0.0);
    double total = 0.0;
    double weight = 1.0;

    try {
        for (int t = 1; t <= options.episodes; ++t) {
            const Symbol action = agent.act(last);
            history.push(action);
            if (run_cycle(state, program, history, env_rng, config, cycle) ==
                CycleStatus::step_limit_exceeded) {
                agent.finish();
                score.status = TrialStatus::step_limit;
                score.cycles = t;
                return score;
            }
            score.cycles = t;
            if (discounted) {
                total += weight * cycle.reward;
                weight *= gamma;
                if (100.0 * weight / (1.0 - gamma) < 0.5) break;
            } else {
                total += cycle.reward;
            }
            percept.reward = cycle.reward;
            percept.observation = cycle.observation;
            last = &percept;
        }
        agent.finish();
    } catch (const AgentError& e) {
        score.status = status_of(e.failure());
        return score;
    }
    score.value = discounted ? (1.0 - gamma) * total : total / options.episodes;
    return score;
}

PairScore run_pair(Agent& agent, const Program& program, const TrialOptions& options,
                   std::uint64_t pair_seed, const MachineConfig& config) {
    PairScore pair;
    const EpisodeScore plain = run_trial(agent, program.negated(false), options, pair_seed, config);
    if (!plain.ok()) {
        pair.status = plain.status;
        return pair;
    }
    const EpisodeScore flipped = run_trial(agent, program.negated(true), options, pair_seed, config);
    if (!flipped.ok()) {
        pair.status = flipped.status;
        return pair;
    }
    pair.score0 = plain.value;
    pair.score1 = flipped.value;
    return pair;
}

// ---------------------------------------------------------------------------

double StratumStats::sd() const { return std::sqrt(variance()); }

StratumStats merge_stats(const StratumStats& a, const StratumStats& b) {
    if (a.n == 0) return b;
    if (b.n == 0) return a;
    StratumStats out;
    out.n = a.n + b.n;
    const double na = static_cast<double>(a.n);
    const double nb = static_cast<double>(b.n);
    const double n = static_cast<double>(out.n);
    const double delta = b.mean - a.mean;
    out.mean = a.mean + delta * nb / n;
    out.m2 = a.m2 + b.m2 + delta * delta * na * nb / n;
    return out;
}

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t worker, std::size_t i)>& f) {
    const std::size_t nworkers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
    if (nworkers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(0, i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    {
        std::vector<std::jthread> threads;
        for (std::size_t w = 0; w < nworkers; ++w) {
            threads.emplace_back([&, w] {
                for (;;) {
                    if (failed.load()) return;
                    const std::size_t i = next.fetch_add(1);
                    if (i >= n) return;
                    try {
                        f(w, i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                        failed = true;
                    }
                }
            });
        }
    }
    if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Sampling driver

std::uint64_t default_batch(std::uint64_t budget, std::size_t strata) {
    return std::max<std::uint64_t>(budget / 10, 4 * strata);
}

std::uint64_t warmup_per_stratum(std::uint64_t budget, std::size_t strata) {
    const std::uint64_t k = strata;
    const std::uint64_t warm_total = std::max<std::uint64_t>(10 * k, (budget + 9) / 10);
    return std::min((warm_total + k - 1) / k, budget / k);
}

std::vector<std::uint64_t> allocate_round(std::uint64_t size, const std::vector<double>& weights,
                                          const std::vector<double>& sds) {
    const std::size_t k = weights.size();
    std::vector<std::uint64_t> counts(k, 0);
    std::vector<double> score(k, 0.0);
    std::vector<std::size_t> positive;
    for (std::size_t i = 0; i < k; ++i) {
        score[i] = weights[i] * std::max(sds[i], 1e-6);
        if (score[i] > 0) positive.push_back(i);
    }
    if (positive.empty() || size == 0) return counts;

    if (size < positive.size()) {
        // Not enough for the floor: the heaviest strata get one each.
        std::stable_sort(positive.begin(), positive.end(),
                         [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
        for (std::size_t j = 0; j < size; ++j) counts[positive[j]] = 1;
        return counts;
    }

    for (std::size_t i : positive) counts[i] = 1;
    const std::uint64_t rest = size - positive.size();
    const double total = std::accumulate(score.begin(), score.end(), 0.0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::uint64_t given = 0;
    for (std::size_t i : positive) {
        const double share = static_cast<double>(rest) * score[i] / total;
        const auto whole = static_cast<std::uint64_t>(std::floor(share));
        counts[i] += whole;
        given += whole;
        remainders.emplace_back(share - static_cast<double>(whole), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t j = 0; given < rest; ++j, ++given) ++counts[remainders[j % remainders.size()].second];
    return counts;
}

namespace {

void push_result(SamplingState& state, std::size_t stratum, std::uint64_t slot, SlotResult&& r) {
    state.stats[stratum].push(r.value);
    if (state.extra_stats.size() < r.extras.size()) state.extra_stats.resize(r.extras.size());
    for (std::size_t j = 0; j < r.extras.size(); ++j) state.extra_stats[j].push(r.extras[j]);
    state.discards += r.discards;
    state.completed.push_back({stratum, slot, r.value, std::move(r.extras), r.program_length, r.discards});
    for (TrialRecord& rec : r.records) state.log.push_back(std::move(rec));
}

void run_round(SamplingState& state, const std::vector<std::uint64_t>& counts, int workers,
               const SlotEvaluator& evaluate) {
    std::vector<std::pair<std::size_t, std::uint64_t>> tasks;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        for (std::uint64_t c = 0; c < counts[i]; ++c) tasks.emplace_back(i, state.next_slot[i]++);
    }
    std::vector<SlotResult> results(tasks.size());
    parallel_for(tasks.size(), workers, [&](std::size_t worker, std::size_t t) {
        results[t] = evaluate(worker, tasks[t].first, tasks[t].second);
    });
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        push_result(state, tasks[t].first, tasks[t].second, std::move(results[t]));
    }
    ++state.rounds;
}

}  // namespace

SamplingState run_sampling(const SamplingPlan& plan, const SlotEvaluator& evaluate,
                           std::optional<SamplingState> resume_from, const BarrierHook& on_barrier) {
    const std::size_t k = plan.weights.size();
    if (k == 0) throw std::invalid_argument("no strata");
    const std::uint64_t warm = warmup_per_stratum(plan.budget, k);
    if (warm < 2) throw std::invalid_argument("budget too small: every stratum needs at least 2 pairs");
    const std::uint64_t batch = plan.batch > 0 ? plan.batch : default_batch(plan.budget, k);

    SamplingState state;
    if (resume_from) {
        state = std::move(*resume_from);
        if (state.stats.size() != k) throw std::invalid_argument("checkpoint has wrong stratum count");
    } else {
        state.stats.assign(k, {});
        state.next_slot.assign(k, 0);
    }

    while (state.pairs() < plan.budget) {
        std::vector<std::uint64_t> counts;
        if (state.rounds == 0) {
            counts.assign(k, warm);
        } else {
            std::vector<double> sds(k);
            for (std::size_t i = 0; i < k; ++i) sds[i] = state.stats[i].sd();
            counts = allocate_round(std::min(batch, plan.budget - state.pairs()), plan.weights, sds);
        }
        run_round(state, counts, plan.workers, evaluate);
        if (on_barrier && state.pairs() < plan.budget && !on_barrier(state)) return state;
    }
    if (on_barrier) on_barrier(state);
    return state;
}

Estimate summarize(const SamplingState& state, const std::vector<double>& weights) {
    Estimate e;
    double var = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const StratumStats& s = state.stats[i];
        if (s.n < 2) throw std::runtime_error("stratum " + std::to_string(i) + " has fewer than 2 samples");
        e.mean += weights[i] * s.mean;
        var += weights[i] * weights[i] * s.variance() / static_cast<double>(s.n);
        e.n += s.n;
        StratumRow row;
        row.id = static_cast<int>(i);
        row.mass = weights[i];
        row.n = s.n;
        row.mean = s.mean;
        row.sd = s.sd();
        e.strata.push_back(row);
    }
    e.std_error = std::sqrt(var);
    e.ci_halfwidth = kZ95 * e.std_error;
    e.discards = state.discards;
    return e;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization

namespace {

using nlohmann::json;

json stats_json(const StratumStats& s) { return json::array({s.n, s.mean, s.m2}); }

StratumStats stats_from(const json& j) {
    return {j.at(0).get<std::uint64_t>(), j.at(1).get<double>(), j.at(2).get<double>()};
}

}  // namespace

std::string SamplingState::to_json() const {
    json j;
    j["rounds"] = rounds;
    j["discards"] = discards;
    j["next_slot"] = next_slot;
    json st = json::array();
    for (const auto& s : stats) st.push_back(stats_json(s));
    j["stats"] = st;
    json ex = json::array();
    for (const auto& s : extra_stats) ex.push_back(stats_json(s));
    j["extra_stats"] = ex;
    json done = json::array();
    for (const auto& c : completed) {
        done.push_back({{"stratum", c.stratum}, {"slot", c.slot}, {"value", c.value},
                        {"extras", c.extras}, {"length", c.program_length}, {"discards", c.discards}});
    }
    j["completed"] = done;
    json log_j = json::array();
    for (const auto& r : log) {
        log_j.push_back({{"slot", r.slot}, {"stratum", r.stratum}, {"agent", r.agent},
                         {"program", r.program}, {"score0", r.score0}, {"score1", r.score1},
                         {"status", std::string(to_string(r.status))}});
    }
    j["log"] = log_j;
    return j.dump();
}

SamplingState SamplingState::from_json(std::string_view text) {
    const json j = json::parse(text);
    SamplingState s;
    s.rounds = j.at("rounds").get<std::uint64_t>();
    s.discards = j.at("discards").get<std::uint64_t>();
    s.next_slot = j.at("next_slot").get<std::vector<std::uint64_t>>();
    for (const auto& x : j.at("stats")) s.stats.push_back(stats_from(x));
    for (const auto& x : j.at("extra_stats")) s.extra_stats.push_back(stats_from(x));
    for (const auto& x : j.at("completed")) {
        CompletedSlot c;
        c.stratum = x.at("stratum").get<std::size_t>();
        c.slot = x.at("slot").get<std::uint64_t>();
        c.value = x.at("value").get<double>();
        c.extras = x.at("extras").get<std::vector<double>>();
        c.program_length = x.at("length").get<std::size_t>();
        c.discards = x.at("discards").get<std::uint64_t>();
        s.completed.push_back(std::move(c));
    }
    for (const auto& x : j.at("log")) {
        TrialRecord r;
        r.slot = x.at("slot").get<std::uint64_t>();
        r.stratum = x.at("stratum").get<int>();
        r.agent = x.at("agent").get<std::string>();
        r.program = x.at("program").get<std::string>();
        r.score0 = x.at("score0").get<double>();
        r.score1 = x.at("score1").get<double>();
        r.status = trial_status_from_string(x.at("status").get<std::string>());
        s.log.push_back(std::move(r));
    }

    // The snapshots must agree with a replay of the completed slots.
    std::vector<StratumStats> replay(s.stats.size());
    std::vector<StratumStats> extras(s.extra_stats.size());
    for (const auto& c : s.completed) {
        if (c.stratum >= replay.size()) throw std::runtime_error("checkpoint: bad stratum index");
        replay[c.stratum].push(c.value);
        for (std::size_t e = 0; e < c.extras.size() && e < extras.size(); ++e) extras[e].push(c.extras[e]);
    }
    if (replay != s.stats || extras != s.extra_stats) {
        throw std::runtime_error("checkpoint: statistics do not match completed samples");
    }
    return s;
}

// ---------------------------------------------------------------------------
// AIQ estimation

AgentFactory factory_for(const AgentSpec& spec) {
    spec.validate();
    if (spec.kind == AgentKind::hlq) make_agent(spec);  // throws the explanatory error
    return [spec] { return make_agent(spec); };
}

std::uint64_t slot_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t slot,
                        std::uint64_t attempt) {
    return derive_seed({master, stream, slot, attempt});
}

namespace {

class WorkerAgents {
public:
    WorkerAgents(AgentFactory factory, int workers)
        : factory_(std::move(factory)), agents_(static_cast<std::size_t>(std::max(1, workers))) {}

    Agent& get(std::size_t worker) {
        auto& slot = agents_.at(worker);
        if (!slot) slot = factory_();
        return *slot;
    }

private:
    AgentFactory factory_;
    std::vector<std::unique_ptr<Agent>> agents_;
};

}  // namespace

SlotEvaluator make_pair_evaluator(const AgentFactory& agent, const StratumTable* table,
                                  const EvalConfig& config) {
    auto agents = std::make_shared<WorkerAgents>(agent, config.workers);
    std::shared_ptr<const StratumTable> tbl;
    if (table != nullptr) tbl = std::make_shared<StratumTable>(*table);
    return [agents, tbl, config](std::size_t worker, std::size_t stratum, std::uint64_t slot) {
        const int id = tbl ? tbl->strata[stratum].id : 0;
        Agent& a = agents->get(worker);
        SlotResult result;
        for (std::uint64_t attempt = 0;; ++attempt) {
            if (attempt > config.max_discards_per_slot) {
                throw std::runtime_error("slot " + std::to_string(slot) + " exceeded the discard cap");
            }
            const std::uint64_t seed =
                slot_seed(config.master_seed, static_cast<std::uint64_t>(id), slot, attempt);
            Rng program_rng(derive_seed(seed, SeedRole::program));
            const Program program = tbl ? sample_from_stratum(id, *tbl, program_rng)
                                        : draw_screened(program_rng, config.machine, config.screening);
            const PairScore pair = run_pair(a, program, config.trial, seed, config.machine);
            result.records.push_back(
                {slot, id, "", program.code(), pair.score0, pair.score1, pair.status});
            if (pair.ok()) {
                result.value = pair.mean();
                result.program_length = program.code().size();
                return result;
            }
            ++result.discards;
        }
    };
}

SlotEvaluator make_comparison_evaluator(const AgentFactory& agent_a, const AgentFactory& agent_b,
                                        const EvalConfig& config) {
    auto agents_a = std::make_shared<WorkerAgents>(agent_a, config.workers);
    auto agents_b = std::make_shared<WorkerAgents>(agent_b, config.workers);
    return [agents_a, agents_b, config](std::size_t worker, std::size_t, std::uint64_t slot) {
        SlotResult result;
        for (std::uint64_t attempt = 0;; ++attempt) {
            if (attempt > config.max_discards_per_slot) {
                throw std::runtime_error("slot " + std::to_string(slot) + " exceeded the discard cap");
            }
            const std::uint64_t seed = slot_seed(config.master_seed, 0, slot, attempt);
            Rng program_rng(derive_seed(seed, SeedRole::program));
            const Program program = draw_screened(program_rng, config.machine, config.screening);
            const PairScore a = run_pair(agents_a->get(worker), program, config.trial, seed, config.machine);
            const PairScore b = a.ok() ? run_pair(agents_b->get(worker), program, config.trial, seed,
                                                  config.machine)
                                       : PairScore{TrialStatus::ok, 0.0, 0.0};
            result.records.push_back({slot, 0, "a", program.code(), a.score0, a.score1, a.status});
            if (a.ok()) {
                result.records.push_back({slot, 0, "b", program.code(), b.score0, b.score1, b.status});
            }
            if (a.ok() && b.ok()) {
                result.value = b.mean() - a.mean();
                result.extras = {a.mean(), b.mean()};
                result.program_length = program.code().size();
                return result;
            }
            ++result.discards;
        }
    };
}

namespace {

void check_config(const EvalConfig& config) {
    config.machine.validate();
    if (config.trial.episodes < 1) throw std::invalid_argument("episodes must be >= 1");
    if (config.trial.discount && !(*config.trial.discount >= 0.0 && *config.trial.discount < 1.0)) {
        throw std::invalid_argument("discount must lie in [0, 1)");
    }
}

}  // namespace

Estimate simple_mc(const AgentFactory& agent, std::uint64_t pairs, const EvalConfig& config,
                   SamplingState* state_out, SamplingControl control) {
    check_config(config);
    if (pairs < 2) throw std::invalid_argument("simple Monte Carlo needs at least 2 pairs");
    const SamplingPlan plan{{1.0}, pairs, config.batch, config.workers};
    SamplingState state = run_sampling(plan, make_pair_evaluator(agent, nullptr, config),
                                       std::move(control.resume_from), control.on_barrier);
    Estimate e = summarize(state, plan.weights);
    e.strata.clear();
    if (state_out) *state_out = std::move(state);
    return e;
}

Estimate adaptive_stratified(const AgentFactory& agent, const StratumTable& table,
                             std::uint64_t pairs, const EvalConfig& config, SamplingState* state_out,
                             SamplingControl control) {
    check_config(config);
    if (pairs < 10 * table.size()) {
        throw std::invalid_argument("stratified sampling needs at least 10 pairs per stratum");
    }
    EvalConfig cfg = config;
    cfg.machine = table.machine;
    cfg.screening = table.screening;
    SamplingPlan plan{{}, pairs, config.batch, config.workers};
    for (const Stratum& s : table.strata) plan.weights.push_back(s.mass);
    SamplingState state = run_sampling(plan, make_pair_evaluator(agent, &table, cfg),
                                       std::move(control.resume_from), control.on_barrier);
    Estimate e = summarize(state, plan.weights);
    for (std::size_t i = 0; i < e.strata.size(); ++i) {
        e.strata[i].id = table.strata[i].id;
        e.strata[i].predicate = table.strata[i].predicate();
    }
    if (state_out) *state_out = std::move(state);
    return e;
}

ComparisonResult comparison_from_state(const SamplingState& state) {
    ComparisonResult r;
    r.delta = summarize(state, {1.0});
    r.delta.strata.clear();
    if (state.extra_stats.size() == 2) {
        const double n = static_cast<double>(state.extra_stats[0].n);
        r.mean_a = state.extra_stats[0].mean;
        r.stderr_a = std::sqrt(state.extra_stats[0].variance() / n);
        r.mean_b = state.extra_stats[1].mean;
        r.stderr_b = std::sqrt(state.extra_stats[1].variance() / n);
    }
    for (const CompletedSlot& c : state.completed) r.differences.push_back(c.value);
    return r;
}

ComparisonResult compare_crn(const AgentFactory& agent_a, const AgentFactory& agent_b,
                             std::uint64_t pairs, const EvalConfig& config, SamplingState* state_out,
                             SamplingControl control) {
    check_config(config);
    if (pairs < 2) throw std::invalid_argument("comparison needs at least 2 pairs");
    const SamplingPlan plan{{1.0}, pairs, config.batch, config.workers};
    SamplingState state = run_sampling(plan, make_comparison_evaluator(agent_a, agent_b, config),
                                       std::move(control.resume_from), control.on_barrier);
    ComparisonResult r = comparison_from_state(state);
    if (state_out) *state_out = std::move(state);
    return r;
}

}  // namespace aiq
