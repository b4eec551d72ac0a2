// Serves a built-in agent over the external agent line protocol on
// stdin/stdout, so `external:cmd=aiq-agent-server SPEC` behaves like SPEC.

#include <iostream>
#include <string>

#include "aiq/agents.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: aiq-agent-server AGENT_SPEC\n";
        return 2;
    }
    try {
        const aiq::AgentSpec spec = aiq::AgentSpec::parse(argv[1]);
        if (spec.kind == aiq::AgentKind::external) throw aiq::ConfigError("cannot serve an external agent");
        auto agent = aiq::make_agent(spec);
        std::ios::sync_with_stdio(false);
        aiq::serve_agent(*agent, std::cin, std::cout);
    } catch (const aiq::ConfigError& e) {
        std::cerr << "aiq-agent-server: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "aiq-agent-server: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
