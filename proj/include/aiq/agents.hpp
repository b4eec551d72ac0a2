#pragma once

#include <chrono>
#include <iosfwd>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aiq/machine.hpp"
#include "aiq/rng.hpp"

namespace aiq {

/// What the agent sees after each cycle.
struct Percept {
    double reward = 0.0;
    std::span<const Symbol> observation;
};

enum class AgentKind { random, freq, qtab, hlq, external };

/// Parsed agent description.
///
/// Text form is `kind[:key=value,...]`, for example `freq:epsilon=0.05`,
/// `q:alpha=0.1,gamma=0.5,lambda=0.9,epsilon=0.05` or
/// `external:cmd=./my_agent --flag,timeout=5`. Only `cmd` may contain spaces.
struct AgentSpec {
    AgentKind kind = AgentKind::random;
    double epsilon = 0.05;
    double alpha = 0.1;
    double gamma = 0.5;
    double lambda = 0.0;
    std::string command;          // external only
    double timeout_seconds = 10;  // external only

    void validate() const;

    static AgentSpec parse(std::string_view text);
    std::string to_string() const;

    friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Interface every agent implements. One instance serves one trial at a
/// time; reset() fully restores the initial state.
class Agent {
public:
    virtual ~Agent() = default;

    virtual void reset(int num_symbols, int obs_cells, std::uint64_t seed) = 0;

    /// `percept` is null only on the first cycle of a trial.
    virtual Symbol act(const Percept* percept) = 0;

    /// Called once when a trial ends normally or is discarded.
    virtual void finish() {}
};

class RandomAgent final : public Agent {
public:
    void reset(int num_symbols, int obs_cells, std::uint64_t seed) override;
    Symbol act(const Percept* percept) override;

private:
    int num_symbols_ = 2;
    Rng rng_;
};

/// Epsilon-greedy over the running mean reward of each action.
class FreqAgent final : public Agent {
public:
    explicit FreqAgent(double epsilon) : epsilon_(epsilon) {}

    void reset(int num_symbols, int obs_cells, std::uint64_t seed) override;
    Symbol act(const Percept* percept) override;

    std::span<const double> means() const { return means_; }
    std::span<const std::uint64_t> counts() const { return counts_; }

private:
    double epsilon_;
    int num_symbols_ = 2;
    std::vector<double> means_;
    std::vector<std::uint64_t> counts_;
    std::optional<Symbol> last_action_;
    std::vector<Symbol> best_;
    Rng rng_;
};

/// Tabular Watkins Q(lambda); the state is the most recent observation.
/// With lambda = 0 this is one-step Q-learning.
class QAgent final : public Agent {
public:
    QAgent(double alpha, double gamma, double lambda, double epsilon);

    void reset(int num_symbols, int obs_cells, std::uint64_t seed) override;
    Symbol act(const Percept* percept) override;

    double q(std::size_t state, Symbol action) const {
        return q_[state * static_cast<std::size_t>(num_symbols_) + static_cast<std::size_t>(action)];
    }
    std::span<const double> q_table() const { return q_; }
    std::size_t num_states() const { return num_states_; }

private:
    std::size_t encode(std::span<const Symbol> observation) const;
    Symbol greedy(std::size_t state);

    double alpha_, gamma_, lambda_, epsilon_;
    int num_symbols_ = 2;
    std::size_t num_states_ = 1;
    std::vector<double> q_;
    std::vector<double> trace_;
    std::vector<std::size_t> active_;  // indices with nonzero trace
    std::vector<Symbol> best_;
    std::size_t state_ = 0;
    Symbol action_ = 0;
    bool started_ = false;
    Rng rng_;
};

// ---------------------------------------------------------------------------
// External agents

enum class AgentFailure { protocol_error, timeout, child_exit };

std::string_view to_string(AgentFailure failure);

class AgentError : public std::runtime_error {
public:
    AgentError(AgentFailure failure, const std::string& what)
        : std::runtime_error(what), failure_(failure) {}
    AgentFailure failure() const { return failure_; }

private:
    AgentFailure failure_;
};

class Subprocess;

/// Drives a child process over the line protocol:
///   harness -> agent: `INIT m obs_cells seed`, `PERCEPT r o1 ... ok` or
///                     `PERCEPT NONE`, `END`
///   agent -> harness: `OK` after INIT, one integer action per PERCEPT.
/// Any failure kills the child; the next reset() starts a fresh one.
class ExternalAgent final : public Agent {
public:
    ExternalAgent(std::string command, std::chrono::milliseconds timeout);
    ~ExternalAgent() override;

    ExternalAgent(const ExternalAgent&) = delete;
    ExternalAgent& operator=(const ExternalAgent&) = delete;

    void reset(int num_symbols, int obs_cells, std::uint64_t seed) override;
    Symbol act(const Percept* percept) override;
    void finish() override;

private:
    std::string exchange(const std::string& line);
    [[noreturn]] void fail(AgentFailure failure, const std::string& what);

    std::string command_;
    std::chrono::milliseconds timeout_;
    std::unique_ptr<Subprocess> child_;
    int num_symbols_ = 2;
    bool in_trial_ = false;
};

/// Builds a fresh agent. Throws ConfigError for kinds that cannot be built,
/// including HLQ(lambda), whose learning-rate rule needs an external
/// reference implementation.
std::unique_ptr<Agent> make_agent(const AgentSpec& spec);

/// Serves `agent` over the external protocol until END-of-input.
/// Used by the agent server tool and by protocol round-trip tests.
void serve_agent(Agent& agent, std::istream& in, std::ostream& out);

}  // namespace aiq
