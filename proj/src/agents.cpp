#include "aiq/agents.hpp"

#include <algorithm>
#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "aiq/subprocess.hpp"

namespace aiq {

namespace {

std::string format_double(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

double parse_double(std::string_view s, std::string_view what) {
    double v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("bad value for " + std::string(what) + ": '" + std::string(s) + "'");
    }
    return v;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
    return s;
}

// Uniform choice among the indices attaining the maximum of `values`.
Symbol argmax_uniform(std::span<const double> values, std::vector<Symbol>& scratch, Rng& rng) {
    const double best = *std::max_element(values.begin(), values.end());
    scratch.clear();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i] == best) scratch.push_back(static_cast<Symbol>(i));
    }
    if (scratch.size() == 1) return scratch.front();
    return scratch[rng.below(scratch.size())];
}

}  // namespace

// ---------------------------------------------------------------------------
// AgentSpec

void AgentSpec::validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon must lie in [0, 1]");
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0, 1]");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in [0, 1)");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must lie in [0, 1]");
    if (kind == AgentKind::external && command.empty()) {
        throw ConfigError("external agent needs cmd=<command>");
    }
    if (!(timeout_seconds > 0)) throw ConfigError("timeout must be positive");
}

AgentSpec AgentSpec::parse(std::string_view text) {
    text = trim(text);
    const std::size_t colon = text.find(':');
    const std::string_view kind = text.substr(0, colon);
    std::string_view rest = colon == std::string_view::npos ? std::string_view{} : text.substr(colon + 1);

    AgentSpec spec;
    if (kind == "random") {
        spec.kind = AgentKind::random;
    } else if (kind == "freq") {
        spec.kind = AgentKind::freq;
    } else if (kind == "q" || kind == "qtab" || kind == "qlambda") {
        spec.kind = AgentKind::qtab;
    } else if (kind == "q0") {
        spec.kind = AgentKind::qtab;
        spec.lambda = 0.0;
    } else if (kind == "hlq") {
        spec.kind = AgentKind::hlq;
    } else if (kind == "external") {
        spec.kind = AgentKind::external;
    } else {
        throw ConfigError("unknown agent kind '" + std::string(kind) + "'");
    }

    while (!rest.empty()) {
        const std::size_t eq = rest.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("expected key=value in agent spec, got '" + std::string(rest) + "'");
        }
        const std::string_view key = trim(rest.substr(0, eq));
        rest.remove_prefix(eq + 1);
        std::string_view value;
        if (key == "cmd") {
            // cmd swallows the remainder so commands may contain commas.
            value = rest;
            rest = {};
        } else {
            const std::size_t comma = rest.find(',');
            value = trim(rest.substr(0, comma));
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        }
        if (key == "epsilon" || key == "eps") {
            spec.epsilon = parse_double(value, key);
        } else if (key == "alpha") {
            spec.alpha = parse_double(value, key);
        } else if (key == "gamma") {
            spec.gamma = parse_double(value, key);
        } else if (key == "lambda") {
            spec.lambda = parse_double(value, key);
        } else if (key == "timeout") {
            spec.timeout_seconds = parse_double(value, key);
        } else if (key == "cmd") {
            spec.command = std::string(trim(value));
        } else {
            throw ConfigError("unknown agent parameter '" + std::string(key) + "'");
        }
    }
    spec.validate();
    return spec;
}

std::string AgentSpec::to_string() const {
    switch (kind) {
        case AgentKind::random: return "random";
        case AgentKind::freq: return "freq:epsilon=" + format_double(epsilon);
        case AgentKind::qtab:
            return "q:alpha=" + format_double(alpha) + ",gamma=" + format_double(gamma) +
                   ",lambda=" + format_double(lambda) + ",epsilon=" + format_double(epsilon);
        case AgentKind::hlq: return "hlq";
        case AgentKind::external:
            return "external:timeout=" + format_double(timeout_seconds) + ",cmd=" + command;
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Built-in agents

void RandomAgent::reset(int num_symbols, int, std::uint64_t seed) {
    num_symbols_ = num_symbols;
    rng_ = Rng(seed);
}

Symbol RandomAgent::act(const Percept*) {
    return static_cast<Symbol>(rng_.below(static_cast<std::uint64_t>(num_symbols_)));
}

void FreqAgent::reset(int num_symbols, int, std::uint64_t seed) {
    num_symbols_ = num_symbols;
    means_.assign(static_cast<std::size_t>(num_symbols), 0.0);
    counts_.assign(static_cast<std::size_t>(num_symbols), 0);
    last_action_.reset();
    rng_ = Rng(seed);
}

Symbol FreqAgent::act(const Percept* percept) {
    if (percept != nullptr && last_action_) {
        const auto a = static_cast<std::size_t>(*last_action_);
        ++counts_[a];
        means_[a] += (percept->reward - means_[a]) / static_cast<double>(counts_[a]);
    }
    Symbol action;
    if (rng_.uniform() < epsilon_) {
        action = static_cast<Symbol>(rng_.below(static_cast<std::uint64_t>(num_symbols_)));
    } else {
        action = argmax_uniform(means_, best_, rng_);
    }
    last_action_ = action;
    return action;
}

QAgent::QAgent(double alpha, double gamma, double lambda, double epsilon)
    : alpha_(alpha), gamma_(gamma), lambda_(lambda), epsilon_(epsilon) {}

void QAgent::reset(int num_symbols, int obs_cells, std::uint64_t seed) {
    num_symbols_ = num_symbols;
    num_states_ = 1;
    for (int i = 0; i < obs_cells; ++i) {
        num_states_ *= static_cast<std::size_t>(num_symbols);
        if (num_states_ > (std::size_t{1} << 24)) {
            throw ConfigError("observation space too large for a tabular agent");
        }
    }
    q_.assign(num_states_ * static_cast<std::size_t>(num_symbols), 0.0);
    trace_.assign(q_.size(), 0.0);
    active_.clear();
    state_ = 0;
    action_ = 0;
    started_ = false;
    rng_ = Rng(seed);
}

std::size_t QAgent::encode(std::span<const Symbol> observation) const {
    std::size_t s = 0;
    for (Symbol o : observation) s = s * static_cast<std::size_t>(num_symbols_) + static_cast<std::size_t>(o);
    return s;
}

Symbol QAgent::greedy(std::size_t state) {
    const std::span<const double> row(q_.data() + state * static_cast<std::size_t>(num_symbols_),
                                      static_cast<std::size_t>(num_symbols_));
    if (rng_.uniform() < epsilon_) {
        return static_cast<Symbol>(rng_.below(static_cast<std::uint64_t>(num_symbols_)));
    }
    return argmax_uniform(row, best_, rng_);
}

Symbol QAgent::act(const Percept* percept) {
    if (percept == nullptr || !started_) {
        // First cycle: the all-zero observation stands in for the state.
        state_ = 0;
        action_ = greedy(state_);
        started_ = true;
        return action_;
    }

    const auto m = static_cast<std::size_t>(num_symbols_);
    const std::size_t next_state = encode(percept->observation);
    const Symbol next_action = greedy(next_state);

    const double* row = q_.data() + next_state * m;
    const double best = *std::max_element(row, row + m);
    const std::size_t idx = state_ * m + static_cast<std::size_t>(action_);
    const double delta = percept->reward + gamma_ * best - q_[idx];
    const bool greedy_step = row[next_action] == best;

    if (trace_[idx] == 0.0) active_.push_back(idx);
    trace_[idx] += 1.0;
    for (std::size_t i : active_) q_[i] += alpha_ * delta * trace_[i];

    if (greedy_step) {
        const double decay = gamma_ * lambda_;
        std::size_t kept = 0;
        for (std::size_t i : active_) {
            trace_[i] *= decay;
            if (trace_[i] > 1e-12) {
                active_[kept++] = i;
            } else {
                trace_[i] = 0.0;
            }
        }
        active_.resize(kept);
    } else {
        // Exploratory step: Watkins cuts the traces.
        for (std::size_t i : active_) trace_[i] = 0.0;
        active_.clear();
    }

    state_ = next_state;
    action_ = next_action;
    return next_action;
}

// ---------------------------------------------------------------------------
// External agents

std::string_view to_string(AgentFailure failure) {
    switch (failure) {
        case AgentFailure::protocol_error: return "agent_protocol_error";
        case AgentFailure::timeout: return "agent_timeout";
        case AgentFailure::child_exit: return "agent_exit";
    }
    return "agent_error";
}

ExternalAgent::ExternalAgent(std::string command, std::chrono::milliseconds timeout)
    : command_(std::move(command)), timeout_(timeout) {}

ExternalAgent::~ExternalAgent() = default;

void ExternalAgent::fail(AgentFailure failure, const std::string& what) {
    child_.reset();
    in_trial_ = false;
    throw AgentError(failure, what);
}

std::string ExternalAgent::exchange(const std::string& line) {
    if (!child_->write(line)) fail(AgentFailure::child_exit, "agent closed its input");
    try {
        auto reply = child_->read_line(timeout_);
        if (!reply) fail(AgentFailure::child_exit, "agent exited");
        return *reply;
    } catch (const SubprocessTimeout&) {
        fail(AgentFailure::timeout, "agent did not answer within timeout");
    }
}

void ExternalAgent::reset(int num_symbols, int obs_cells, std::uint64_t seed) {
    if (child_ && in_trial_) finish();
    if (!child_ || !child_->running()) child_ = std::make_unique<Subprocess>(command_);
    num_symbols_ = num_symbols;
    const std::string reply = exchange("INIT " + std::to_string(num_symbols) + ' ' +
                                       std::to_string(obs_cells) + ' ' + std::to_string(seed) + '\n');
    if (trim(reply) != "OK") fail(AgentFailure::protocol_error, "expected OK after INIT, got '" + reply + "'");
    in_trial_ = true;
}

Symbol ExternalAgent::act(const Percept* percept) {
    if (!child_ || !in_trial_) fail(AgentFailure::protocol_error, "act() before reset()");
    std::string line = "PERCEPT";
    if (percept == nullptr) {
        line += " NONE";
    } else {
        line += ' ' + format_double(percept->reward);
        for (Symbol o : percept->observation) line += ' ' + std::to_string(o);
    }
    line += '\n';
    const std::string reply = exchange(line);
    const std::string_view v = trim(reply);
    Symbol action = -1;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), action);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
        fail(AgentFailure::protocol_error, "malformed action line '" + reply + "'");
    }
    if (action < 0 || action >= num_symbols_) {
        fail(AgentFailure::protocol_error, "action " + std::to_string(action) + " out of range");
    }
    return action;
}

void ExternalAgent::finish() {
    if (child_ && in_trial_) child_->write("END\n");
    in_trial_ = false;
}

std::unique_ptr<Agent> make_agent(const AgentSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case AgentKind::random: return std::make_unique<RandomAgent>();
        case AgentKind::freq: return std::make_unique<FreqAgent>(spec.epsilon);
        case AgentKind::qtab:
            return std::make_unique<QAgent>(spec.alpha, spec.gamma, spec.lambda, spec.epsilon);
        case AgentKind::hlq:
            throw ConfigError(
                "agent 'hlq' (HLQ(lambda)) requires an external reference implementation of its "
                "adaptive learning-rate rule; run one through --agent external:cmd=<program>");
        case AgentKind::external:
            return std::make_unique<ExternalAgent>(
                spec.command, std::chrono::milliseconds(static_cast<long>(spec.timeout_seconds * 1000)));
    }
    throw ConfigError("unknown agent kind");
}

void serve_agent(Agent& agent, std::istream& in, std::ostream& out) {
    std::string line;
    std::vector<Symbol> observation;
    while (std::getline(in, line)) {
        std::istringstream words(line);
        std::string verb;
        words >> verb;
        if (verb == "INIT") {
            int m = 0, k = 0;
            std::uint64_t seed = 0;
            words >> m >> k >> seed;
            agent.reset(m, k, seed);
            out << "OK\n" << std::flush;
        } else if (verb == "PERCEPT") {
            std::string first;
            words >> first;
            Symbol action;
            if (first == "NONE") {
                action = agent.act(nullptr);
            } else {
                Percept p;
                p.reward = parse_double(first, "reward");
                observation.clear();
                Symbol o;
                while (words >> o) observation.push_back(o);
                p.observation = observation;
                action = agent.act(&p);
            }
            out << action << '\n' << std::flush;
        } else if (verb == "END") {
            agent.finish();
        }
    }
}

}  // namespace aiq
