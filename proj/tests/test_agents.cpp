#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "aiq/agents.hpp"
#include "aiq/estimator.hpp"

using namespace aiq;

namespace {

Percept percept_of(double reward, const std::vector<Symbol>& obs) { return {reward, obs}; }

std::string external(const std::string& mode, double timeout = 5) {
    std::ostringstream os;
    os << "external:timeout=" << timeout << ",cmd=" << FAKE_AGENT << ' ' << mode;
    return os.str();
}

// Plays `agent` against a program for `cycles` cycles and returns the actions.
std::vector<Symbol> play(Agent& agent, const Program& program, int cycles, std::uint64_t seed) {
    MachineConfig cfg;
    MachineState st;
    Rng env(seed);
    ActionHistory h;
    std::vector<Symbol> actions;
    agent.reset(cfg.num_symbols, cfg.obs_cells, seed);
    CyclePercept cp;
    Percept p;
    const Percept* last = nullptr;
    for (int t = 0; t < cycles; ++t) {
        const Symbol a = agent.act(last);
        actions.push_back(a);
        h.push(a);
        REQUIRE(run_cycle(st, program, h, env, cfg, cp) == CycleStatus::percept);
        p = {cp.reward, cp.observation};
        last = &p;
    }
    agent.finish();
    return actions;
}

// Reference Watkins Q(lambda) with a dense trace table and no pruning. Its
// random draws mirror the agent's: one uniform for the exploration test,
// then either a uniform action or a uniform pick among tied maxima.
class ReferenceQ {
public:
    ReferenceQ(int m, double alpha, double gamma, double lambda, double eps, std::uint64_t seed)
        : m_(m), alpha_(alpha), gamma_(gamma), lambda_(lambda), eps_(eps), q_(m * m, 0.0),
          e_(m * m, 0.0), rng_(seed) {}

    Symbol act(const Percept* p) {
        if (!p) {
            s_ = 0;
            a_ = choose(0);
            return a_;
        }
        const int s2 = p->observation[0];
        const Symbol a2 = choose(s2);
        const double best = maxrow(s2);
        const double delta = p->reward + gamma_ * best - q_[s_ * m_ + a_];
        const bool greedy = q_[s2 * m_ + a2] == best;
        e_[s_ * m_ + a_] += 1.0;
        for (int i = 0; i < m_ * m_; ++i) q_[i] += alpha_ * delta * e_[i];
        for (double& e : e_) e = greedy ? e * gamma_ * lambda_ : 0.0;
        s_ = s2;
        a_ = a2;
        return a2;
    }

    double q(int s, int a) const { return q_[s * m_ + a]; }

private:
    double maxrow(int s) const {
        double best = q_[s * m_];
        for (int b = 1; b < m_; ++b) best = std::max(best, q_[s * m_ + b]);
        return best;
    }

    Symbol choose(int s) {
        if (rng_.uniform() < eps_) return static_cast<Symbol>(rng_.below(m_));
        const double best = maxrow(s);
        std::vector<Symbol> ties;
        for (int b = 0; b < m_; ++b) {
            if (q_[s * m_ + b] == best) ties.push_back(b);
        }
        return ties.size() == 1 ? ties[0] : ties[rng_.below(ties.size())];
    }

    int m_;
    double alpha_, gamma_, lambda_, eps_;
    std::vector<double> q_, e_;
    int s_ = 0;
    Symbol a_ = 0;
    Rng rng_;
};

}  // namespace

TEST_CASE("agent spec parsing") {
    CHECK(AgentSpec::parse("random").kind == AgentKind::random);
    const AgentSpec f = AgentSpec::parse("freq:epsilon=0.1");
    CHECK(f.kind == AgentKind::freq);
    CHECK(f.epsilon == 0.1);
    const AgentSpec q = AgentSpec::parse("q:alpha=0.5,gamma=0.85,lambda=0.9,epsilon=0.01");
    CHECK(q.kind == AgentKind::qtab);
    CHECK(q.alpha == 0.5);
    CHECK(q.gamma == 0.85);
    CHECK(q.lambda == 0.9);
    CHECK(q.epsilon == 0.01);
    const AgentSpec x = AgentSpec::parse("external:timeout=2,cmd=my agent --flag a=b,c");
    CHECK(x.kind == AgentKind::external);
    CHECK(x.command == "my agent --flag a=b,c");
    CHECK(x.timeout_seconds == 2);
    for (const AgentSpec& s : {f, q, x, AgentSpec::parse("hlq"), AgentSpec::parse("random")}) {
        CHECK(AgentSpec::parse(s.to_string()) == s);
    }
    CHECK(AgentSpec::parse("q:alpha=0.1,gamma=0.3333333333333333").gamma == 0.3333333333333333);

    CHECK_THROWS_AS(AgentSpec::parse("freq:epsilon=1.5"), ConfigError);
    CHECK_THROWS_AS(AgentSpec::parse("q:alpha=0"), ConfigError);
    CHECK_THROWS_AS(AgentSpec::parse("q:gamma=1"), ConfigError);
    CHECK_THROWS_AS(AgentSpec::parse("q:lambda=-0.1"), ConfigError);
    CHECK_THROWS_AS(AgentSpec::parse("wizard"), ConfigError);
    CHECK_THROWS_AS(AgentSpec::parse("freq:speed=3"), ConfigError);
    CHECK_THROWS_AS(AgentSpec::parse("external"), ConfigError);
}

TEST_CASE("hlq is registered but needs an external reference") {
    const AgentSpec h = AgentSpec::parse("hlq");
    CHECK(h.kind == AgentKind::hlq);
    try {
        make_agent(h);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("external reference") != std::string::npos);
    }
}

TEST_CASE("reset restores the initial state") {
    FreqAgent f(0.1);
    f.reset(5, 1, 3);
    CHECK(std::all_of(f.means().begin(), f.means().end(), [](double v) { return v == 0.0; }));
    CHECK(std::all_of(f.counts().begin(), f.counts().end(), [](auto c) { return c == 0u; }));
    const Program p(false, ",.");
    const auto first = play(f, p, 200, 9);
    const auto again = play(f, p, 200, 9);
    CHECK(first == again);
    f.reset(5, 1, 3);
    CHECK(std::all_of(f.means().begin(), f.means().end(), [](double v) { return v == 0.0; }));

    QAgent q(0.5, 0.9, 0.8, 0.1);
    play(q, Program(false, ",.>,."), 300, 4);
    CHECK(std::any_of(q.q_table().begin(), q.q_table().end(), [](double v) { return v != 0.0; }));
    q.reset(5, 1, 4);
    CHECK(std::all_of(q.q_table().begin(), q.q_table().end(), [](double v) { return v == 0.0; }));
    CHECK(q.num_states() == 5);

    RandomAgent r;
    CHECK(play(r, p, 100, 5) == play(r, p, 100, 5));
}

TEST_CASE("random agent is uniform and ignores percepts") {
    RandomAgent r;
    r.reset(5, 1, 77);
    std::array<int, 5> counts{};
    const int n = 100'000;
    const std::vector<Symbol> obs{0};
    Percept p = percept_of(100, obs);
    for (int i = 0; i < n; ++i) ++counts[r.act(i ? &p : nullptr)];
    for (int c : counts) CHECK(std::abs(c / double(n) - 0.2) <= 0.01);

    RandomAgent a, b;
    a.reset(5, 1, 8);
    b.reset(5, 1, 8);
    Percept pa = percept_of(50, obs), pb = percept_of(-50, obs);
    for (int i = 0; i < 1000; ++i) CHECK(a.act(i ? &pa : nullptr) == b.act(i ? &pb : nullptr));
}

TEST_CASE("freq agent with epsilon 0 locks onto the best action") {
    FreqAgent f(0.0);
    f.reset(5, 1, 12);
    const std::vector<Symbol> obs{0};
    Symbol a = f.act(nullptr);
    std::vector<Symbol> tail;
    for (int t = 0; t < 300; ++t) {
        Percept p = percept_of(a == 1 ? 50.0 : 0.0, obs);
        a = f.act(&p);
        if (t >= 200) tail.push_back(a);
    }
    CHECK(std::all_of(tail.begin(), tail.end(), [](Symbol s) { return s == 1; }));
    CHECK(f.means()[1] == 50.0);
}

TEST_CASE("freq agent with epsilon 0 is greedy and breaks ties uniformly") {
    Rng rewards(5);
    const std::vector<Symbol> obs{0};
    for (int trial = 0; trial < 50; ++trial) {
        FreqAgent f(0.0);
        f.reset(5, 1, static_cast<std::uint64_t>(trial));
        Symbol a = f.act(nullptr);
        for (int t = 0; t < 100; ++t) {
            Percept p = percept_of(static_cast<double>(rewards.below(3)) * 50.0 - 50.0, obs);
            a = f.act(&p);
            const double best = *std::max_element(f.means().begin(), f.means().end());
            REQUIRE(f.means()[static_cast<std::size_t>(a)] == best);
        }
    }
    std::array<int, 5> first{};
    for (std::uint64_t seed = 0; seed < 50'000; ++seed) {
        FreqAgent f(0.0);
        f.reset(5, 1, seed);
        ++first[f.act(nullptr)];
    }
    for (int c : first) CHECK(std::abs(c / 50'000.0 - 0.2) <= 0.01);
}

TEST_CASE("q-learning finds the best action of a one-state bandit") {
    // `,.` pays the last action as reward; the best action is the top symbol.
    QAgent q(0.1, 0.0, 0.0, 0.05);
    play(q, Program(false, ",."), 5000, 21);
    const double q4 = q.q(0, 4);
    for (Symbol a = 0; a < 4; ++a) CHECK(q.q(0, a) < q4);
    CHECK(q4 == doctest::Approx(100.0).epsilon(0.01));
}

TEST_CASE("Q(0) matches one-step Q-learning bitwise; Q(lambda) matches dense traces") {
    const std::vector<std::pair<double, const char*>> cases = {
        {0.0, ",.>,."}, {0.0, "%.,>."}, {0.9, ",.>,."}, {0.5, ",[>.<-]>,."}, {0.95, "%>,.<."}};
    for (const auto& [lambda, code] : cases) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            QAgent agent(0.3, 0.7, lambda, 0.1);
            agent.reset(5, 1, seed);
            ReferenceQ ref(5, 0.3, 0.7, lambda, 0.1, seed);
            MachineConfig cfg;
            MachineState st;
            Rng env(seed * 31);
            ActionHistory h;
            const Program prog(false, code);
            CyclePercept cp;
            Percept p;
            const Percept* last = nullptr;
            for (int t = 0; t < 2000; ++t) {
                const Symbol a = agent.act(last);
                REQUIRE(a == ref.act(last));
                h.push(a);
                REQUIRE(run_cycle(st, prog, h, env, cfg, cp) == CycleStatus::percept);
                p = {cp.reward, cp.observation};
                last = &p;
            }
            for (int s = 0; s < 5; ++s) {
                for (Symbol a = 0; a < 5; ++a) {
                    if (lambda == 0.0) REQUIRE(agent.q(s, a) == ref.q(s, a));
                    else REQUIRE(std::abs(agent.q(s, a) - ref.q(s, a)) <= 1e-9);
                }
            }
        }
    }
}

TEST_CASE("built-in agents are deterministic in seed and percepts") {
    for (const char* spec : {"random", "freq:epsilon=0.2", "q:alpha=0.4,gamma=0.6,lambda=0.7,epsilon=0.2"}) {
        auto a = make_agent(AgentSpec::parse(spec));
        auto b = make_agent(AgentSpec::parse(spec));
        const Program prog(false, "%,.>%.");
        CHECK(play(*a, prog, 500, 44) == play(*b, prog, 500, 44));
    }
}

TEST_CASE("serve_agent speaks the protocol") {
    RandomAgent r;
    std::istringstream in("INIT 5 1 9\nPERCEPT NONE\nPERCEPT 50 3\nPERCEPT -100 0\nEND\n");
    std::ostringstream out;
    serve_agent(r, in, out);
    RandomAgent ref;
    ref.reset(5, 1, 9);
    std::ostringstream expect;
    expect << "OK\n" << ref.act(nullptr) << '\n' << ref.act(nullptr) << '\n' << ref.act(nullptr) << '\n';
    CHECK(out.str() == expect.str());
}

TEST_CASE("external agent adapter") {
    SUBCASE("echo-style child answering 0") {
        auto a = make_agent(AgentSpec::parse(external("zero")));
        const auto actions = play(*a, Program(false, ",."), 50, 1);
        CHECK(std::all_of(actions.begin(), actions.end(), [](Symbol s) { return s == 0; }));
        // the child is reused across trials
        CHECK(play(*a, Program(false, ",."), 10, 2) == std::vector<Symbol>(10, 0));
    }
    SUBCASE("failures are distinguishable") {
        const auto failure_of = [](const std::string& mode, double timeout) {
            auto a = make_agent(AgentSpec::parse(external(mode, timeout)));
            try {
                a->reset(5, 1, 1);
                a->act(nullptr);
            } catch (const AgentError& e) {
                return e.failure();
            }
            FAIL("expected AgentError");
            return AgentFailure::protocol_error;
        };
        CHECK(failure_of("seven", 5) == AgentFailure::protocol_error);
        CHECK(failure_of("garbage", 5) == AgentFailure::protocol_error);
        CHECK(failure_of("noinit", 5) == AgentFailure::protocol_error);
        CHECK(failure_of("exit", 5) == AgentFailure::child_exit);
        CHECK(failure_of("sleep", 0.3) == AgentFailure::timeout);
        auto missing = make_agent(AgentSpec::parse("external:cmd=/nonexistent/agent"));
        CHECK_THROWS_AS(missing->reset(5, 1, 1), AgentError);
    }
    SUBCASE("trial statuses") {
        const Program prog(false, ",.");
        const MachineConfig cfg;
        const TrialOptions opts{20, {}};
        const auto status = [&](const std::string& mode, double timeout) {
            auto a = make_agent(AgentSpec::parse(external(mode, timeout)));
            return run_pair(*a, prog, opts, 3, cfg).status;
        };
        CHECK(status("zero", 5) == TrialStatus::ok);
        CHECK(status("seven", 5) == TrialStatus::agent_protocol_error);
        CHECK(status("exit", 5) == TrialStatus::agent_exit);
        CHECK(status("sleep", 0.3) == TrialStatus::agent_timeout);
    }
    SUBCASE("a failed child is replaced on the next reset") {
        auto a = make_agent(AgentSpec::parse(external("exit")));
        for (int i = 0; i < 3; ++i) {
            a->reset(5, 1, 1);
            try {
                a->act(nullptr);
                FAIL("expected AgentError");
            } catch (const AgentError& e) {
                CHECK(e.failure() == AgentFailure::child_exit);
            }
        }
    }
}

TEST_CASE("built-in agents behind the protocol match in-process runs") {
    EvalConfig cfg;
    cfg.trial.episodes = 200;
    cfg.master_seed = 5;
    for (const char* spec : {"random", "freq:epsilon=0.05", "q:alpha=0.5,gamma=0.85,lambda=0.9,epsilon=0.01"}) {
        const std::string wrapped = std::string("external:cmd=") + AGENT_SERVER + " " + spec;
        const Estimate in_process = simple_mc(factory_for(AgentSpec::parse(spec)), 30, cfg);
        const Estimate remote = simple_mc(factory_for(AgentSpec::parse(wrapped)), 30, cfg);
        CHECK(remote.mean == in_process.mean);
        CHECK(remote.std_error == in_process.std_error);
        CHECK(std::abs(remote.mean - in_process.mean) <= in_process.ci_halfwidth);
    }
}
