#include "aiq/machine.hpp"

#include <stdexcept>

namespace aiq {

void MachineConfig::validate() const {
    if (num_symbols < 2) throw std::invalid_argument("num_symbols must be >= 2");
    if (obs_cells < 1) throw std::invalid_argument("obs_cells must be >= 1");
    if (step_limit < 1) throw std::invalid_argument("step_limit must be >= 1");
    if (max_program_len < 1) throw std::invalid_argument("max_program_len must be >= 1");
}

bool is_instruction(char c) { return kInstructions.find(c) != std::string_view::npos; }

JumpTable::JumpTable(std::string_view code) : targets_(code.size()) {
    std::vector<std::size_t> open;
    for (std::size_t i = 0; i < code.size(); ++i) {
        targets_[i] = i + 1;
        if (code[i] == '[') {
            open.push_back(i);
        } else if (code[i] == ']' && !open.empty()) {
            const std::size_t j = open.back();
            open.pop_back();
            targets_[j] = i + 1;
            targets_[i] = j + 1;
        }
    }
    for (std::size_t j : open) targets_[j] = code.size();
}

JumpTable resolve_brackets(std::string_view code) { return JumpTable(code); }

Program::Program(bool negate, std::string code)
    : negate_(negate), code_(std::move(code)), jumps_(code_) {
    for (char c : code_) {
        if (!is_instruction(c)) {
            throw std::invalid_argument(std::string("invalid instruction '") + c + "'");
        }
    }
}

Program Program::negated(bool negate) const {
    Program p = *this;
    p.negate_ = negate;
    return p;
}

std::string Program::to_text() const { return negate_ ? "!" + code_ : code_; }

Program Program::from_text(std::string_view text) {
    while (!text.empty() && (text.back() == '\r' || text.back() == '\n')) text.remove_suffix(1);
    bool negate = false;
    if (!text.empty() && text.front() == '!') {
        negate = true;
        text.remove_prefix(1);
    }
    return Program(negate, std::string(text));
}

Symbol MachineState::cell(std::int64_t index) const {
    const std::int64_t i = origin_ + index;
    if (i < 0 || i >= static_cast<std::int64_t>(tape_.size())) return 0;
    return tape_[static_cast<std::size_t>(i)];
}

void MachineState::reset() { *this = MachineState(); }

Symbol& MachineState::at_head() {
    std::int64_t i = origin_ + head_;
    if (i < 0) {
        const std::size_t grow = std::max<std::size_t>(tape_.size(), static_cast<std::size_t>(-i));
        tape_.insert(tape_.begin(), grow, 0);
        origin_ += static_cast<std::int64_t>(grow);
        i += static_cast<std::int64_t>(grow);
    } else if (i >= static_cast<std::int64_t>(tape_.size())) {
        tape_.resize(std::max(tape_.size() * 2, static_cast<std::size_t>(i) + 1), 0);
    }
    return tape_[static_cast<std::size_t>(i)];
}

double normalize_reward(Symbol symbol, int num_symbols, bool negate) {
    const double span = num_symbols - 1;
    const double r = 100.0 * (2.0 * symbol - span) / span;
    return negate ? -r : r;
}

class Interpreter {
public:
    static CycleStatus run(MachineState& state, const Program& program,
                           const ActionHistory& history, Rng& rng,
                           const MachineConfig& config, CyclePercept& out) {
        const std::string& code = program.code();
        const JumpTable& jumps = program.jumps();
        const Symbol m = config.num_symbols;
        const int outputs = 1 + config.obs_cells;

        out.observation.assign(static_cast<std::size_t>(config.obs_cells), 0);
        out.reward_symbol = 0;

        std::int64_t steps = 0;
        std::size_t reads = 0;
        int writes = 0;
        std::size_t pc = 0;
        while (pc < code.size()) {
            if (++steps >= config.step_limit) return CycleStatus::step_limit_exceeded;
            switch (code[pc]) {
                case '>':
                    ++state.head_;
                    break;
                case '<':
                    --state.head_;
                    break;
                case '+': {
                    Symbol& c = state.at_head();
                    c = c + 1 == m ? 0 : c + 1;
                    break;
                }
                case '-': {
                    Symbol& c = state.at_head();
                    c = c == 0 ? m - 1 : c - 1;
                    break;
                }
                case ',':
                    state.at_head() = history.recent(reads++);
                    break;
                case '.': {
                    const Symbol v = state.cell(state.head_);
                    if (writes == 0) {
                        out.reward_symbol = v;
                    } else if (writes < outputs) {
                        out.observation[static_cast<std::size_t>(writes - 1)] = v;
                    } else {
                        pc = code.size();
                        continue;
                    }
                    ++writes;
                    break;
                }
                case '[':
                    if (state.cell(state.head_) == 0) {
                        pc = jumps.target(pc);
                        continue;
                    }
                    break;
                case ']':
                    if (state.cell(state.head_) != 0) {
                        pc = jumps.target(pc);
                        continue;
                    }
                    break;
                case '%':
                    state.at_head() = static_cast<Symbol>(rng.below(static_cast<std::uint64_t>(m)));
                    break;
                default:
                    break;
            }
            ++pc;
        }
        out.reward = normalize_reward(out.reward_symbol, config.num_symbols, program.negate());
        return CycleStatus::percept;
    }
};

CycleStatus run_cycle(MachineState& state, const Program& program, const ActionHistory& history,
                      Rng& rng, const MachineConfig& config, CyclePercept& out) {
    return Interpreter::run(state, program, history, rng, config, out);
}

CycleOutcome run_cycle(MachineState& state, const Program& program, const ActionHistory& history,
                       Rng& rng, const MachineConfig& config) {
    CyclePercept percept;
    if (run_cycle(state, program, history, rng, config, percept) == CycleStatus::step_limit_exceeded) {
        return StepLimitExceeded{};
    }
    return percept;
}

}  // namespace aiq
