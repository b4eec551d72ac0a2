#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "aiq/rng.hpp"

namespace aiq {

using Symbol = std::int32_t;

struct MachineConfig {
    int num_symbols = 5;
    int obs_cells = 1;
    std::int64_t step_limit = 1000;
    std::size_t max_program_len = 1000;

    /// Throws std::invalid_argument when an invariant is broken.
    void validate() const;

    friend bool operator==(const MachineConfig&, const MachineConfig&) = default;
};

/// The nine instruction characters of the extended machine.
inline constexpr std::string_view kInstructions = "><+-.,[]%";

bool is_instruction(char c);

/// Jump destinations for bracket instructions.
///
/// target(i) is where execution continues when the jump at i is taken: for a
/// matched `[` that is one past its `]`, for a matched `]` one past its `[`.
/// An unmatched `[` jumps to the end of the code, an unmatched `]` jumps to
/// i + 1, which makes it a no-op.
class JumpTable {
public:
    JumpTable() = default;
    explicit JumpTable(std::string_view code);

    std::size_t target(std::size_t pos) const { return targets_[pos]; }
    std::size_t size() const { return targets_.size(); }

private:
    std::vector<std::size_t> targets_;
};

JumpTable resolve_brackets(std::string_view code);

/// An environment program: a reward-negation bit plus instruction code.
class Program {
public:
    Program() = default;
    Program(bool negate, std::string code);

    bool negate() const { return negate_; }
    const std::string& code() const { return code_; }
    const JumpTable& jumps() const { return jumps_; }

    Program negated(bool negate) const;

    /// Text form: optional leading `!` for negate, then the code verbatim.
    std::string to_text() const;
    static Program from_text(std::string_view text);

    friend bool operator==(const Program& a, const Program& b) {
        return a.negate_ == b.negate_ && a.code_ == b.code_;
    }

private:
    bool negate_ = false;
    std::string code_;
    JumpTable jumps_;
};

/// Actions stored oldest-first; indexed most-recent-first as the machine
/// reads them.
class ActionHistory {
public:
    void push(Symbol action) { actions_.push_back(action); }
    void clear() { actions_.clear(); }
    std::size_t size() const { return actions_.size(); }

    /// The i-th most recent action (0 = latest), or 0 beyond the history.
    Symbol recent(std::size_t i) const {
        return i < actions_.size() ? actions_[actions_.size() - 1 - i] : 0;
    }

private:
    std::vector<Symbol> actions_;
};

/// Work tape and head. Persistent across the cycles of one trial.
class MachineState {
public:
    MachineState() = default;

    Symbol cell(std::int64_t index) const;
    std::int64_t head() const { return head_; }

    void reset();

    /// All materialized cells, leftmost first.
    std::span<const Symbol> cells() const { return tape_; }

    friend bool operator==(const MachineState&, const MachineState&) = default;

private:
    friend class Interpreter;

    Symbol& at_head();

    std::vector<Symbol> tape_ = std::vector<Symbol>(16, 0);
    std::int64_t origin_ = 8;  // tape_ index of logical cell 0
    std::int64_t head_ = 0;
};

struct CyclePercept {
    Symbol reward_symbol = 0;
    std::vector<Symbol> observation;
    double reward = 0.0;

    friend bool operator==(const CyclePercept&, const CyclePercept&) = default;
};

struct StepLimitExceeded {
    friend bool operator==(const StepLimitExceeded&, const StepLimitExceeded&) = default;
};

using CycleOutcome = std::variant<CyclePercept, StepLimitExceeded>;

enum class CycleStatus { percept, step_limit_exceeded };

/// Maps a reward symbol onto the evenly spaced grid spanning [-100, 100].
double normalize_reward(Symbol symbol, int num_symbols, bool negate);

/// Runs one interaction cycle. Execution starts at the first instruction;
/// the tape and head in `state` carry over from earlier cycles.
CycleOutcome run_cycle(MachineState& state, const Program& program,
                       const ActionHistory& history, Rng& rng,
                       const MachineConfig& config);

/// Allocation-free variant for hot loops; `out` is valid only when the
/// status is CycleStatus::percept.
CycleStatus run_cycle(MachineState& state, const Program& program,
                      const ActionHistory& history, Rng& rng,
                      const MachineConfig& config, CyclePercept& out);

}  // namespace aiq
