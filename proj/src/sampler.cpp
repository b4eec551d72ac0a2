#include "aiq/sampler.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <thread>

namespace aiq {

namespace {

constexpr std::uint64_t kSymbolChoices = kInstructions.size() + 1;  // + end marker

bool cancels(char a, char b) {
    return (a == '+' && b == '-') || (a == '-' && b == '+') || (a == '<' && b == '>') ||
           (a == '>' && b == '<') || (a == '[' && b == ']');
}

std::uint64_t parse_u64(std::string_view s, std::string_view what) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw StratumError("bad " + std::string(what) + " '" + std::string(s) + "'");
    }
    return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

}  // namespace

RawProgram sample_program(Rng& rng, const MachineConfig& config) {
    RawProgram raw;
    for (;;) {
        raw.negate = rng.coin();
        raw.code.clear();
        bool ended = false;
        while (raw.code.size() < config.max_program_len) {
            const std::uint64_t s = rng.below(kSymbolChoices);
            if (s == kInstructions.size()) {
                ended = true;
                break;
            }
            raw.code.push_back(kInstructions[s]);
        }
        if (ended) return raw;
    }
}

std::string simplify(std::string_view code) {
    // A single stack pass reaches the same fixpoint as repeated scanning:
    // every deletion only ever exposes the new neighbour of the stack top.
    std::string out;
    out.reserve(code.size());
    for (char c : code) {
        if (!out.empty() && cancels(out.back(), c)) {
            out.pop_back();
        } else {
            out.push_back(c);
        }
    }
    return out;
}

std::string_view to_string(RejectReason reason) {
    switch (reason) {
        case RejectReason::empty_after_simplify: return "empty_after_simplify";
        case RejectReason::no_read: return "no_read";
        case RejectReason::no_write: return "no_write";
        case RejectReason::dry_run_timeout: return "dry_run_timeout";
    }
    return "unknown";
}

ScreenResult screen_static(const RawProgram& raw) {
    std::string code = simplify(raw.code);
    if (code.empty()) return Reject{RejectReason::empty_after_simplify};
    if (code.find(',') == std::string::npos) return Reject{RejectReason::no_read};
    if (code.find('.') == std::string::npos) return Reject{RejectReason::no_write};
    return Program(raw.negate, std::move(code));
}

bool dry_run(const Program& program, int cycles, Rng& rng, const MachineConfig& config) {
    MachineState state;
    ActionHistory history;
    CyclePercept percept;
    for (int t = 0; t < cycles; ++t) {
        history.push(static_cast<Symbol>(rng.below(static_cast<std::uint64_t>(config.num_symbols))));
        if (run_cycle(state, program, history, rng, config, percept) ==
            CycleStatus::step_limit_exceeded) {
            return false;
        }
    }
    return true;
}

ScreenResult screen(const RawProgram& raw, Rng& rng, const MachineConfig& config,
                    const ScreenOptions& options) {
    ScreenResult result = screen_static(raw);
    if (options.dry_run && std::holds_alternative<Program>(result) &&
        !dry_run(std::get<Program>(result), options.dry_run_cycles, rng, config)) {
        return Reject{RejectReason::dry_run_timeout};
    }
    return result;
}

Program draw_screened(Rng& rng, const MachineConfig& machine, const ScreenOptions& screening) {
    for (;;) {
        ScreenResult r = screen(sample_program(rng, machine), rng, machine, screening);
        if (auto* p = std::get_if<Program>(&r)) return std::move(*p);
    }
}

// ---------------------------------------------------------------------------

Motif motif_of(std::string_view code) {
    if (code.find(",.") != std::string_view::npos) return Motif::read_write_adjacent;
    if (code.find('%') != std::string_view::npos) return Motif::random;
    if (code.find('[') != std::string_view::npos) return Motif::loop;
    return Motif::none;
}

bool reacts_to_actions(const Program& program, const MachineConfig& config, int cycles, int probes) {
    const auto m = static_cast<std::uint64_t>(config.num_symbols);
    CyclePercept pa;
    CyclePercept pb;
    for (int probe = 0; probe < probes; ++probe) {
        const auto j = static_cast<std::uint64_t>(probe);
        Rng actions(derive_seed({0x616374696f6e73ULL, j}));
        Rng env_a(derive_seed({0x656e76ULL, j}));
        Rng env_b(derive_seed({0x656e76ULL, j}));
        MachineState sa;
        MachineState sb;
        ActionHistory ha;
        ActionHistory hb;
        for (int t = 0; t < cycles; ++t) {
            // The two sequences differ at every cycle.
            const auto a = actions.below(m);
            const auto b = (a + 1 + actions.below(m - 1)) % m;
            ha.push(static_cast<Symbol>(a));
            hb.push(static_cast<Symbol>(b));
            const CycleStatus ra = run_cycle(sa, program, ha, env_a, config, pa);
            const CycleStatus rb = run_cycle(sb, program, hb, env_b, config, pb);
            if (ra != rb) return true;
            if (ra == CycleStatus::step_limit_exceeded) break;
            if (pa.reward_symbol != pb.reward_symbol) return true;
        }
    }
    return false;
}

int length_bin_of(std::size_t length) {
    int bin = 0;
    for (std::size_t edge : kLengthBinEdges) {
        if (length <= edge) return bin;
        ++bin;
    }
    return bin;
}

std::string_view motif_name(Motif motif) {
    switch (motif) {
        case Motif::read_write_adjacent: return "read-write";
        case Motif::random: return "random";
        case Motif::loop: return "loop";
        case Motif::none: return "plain";
    }
    return "?";
}

namespace {

LengthRange bin_range(int bin) {
    const std::size_t lo = bin == 0 ? 1 : kLengthBinEdges[bin - 1] + 1;
    const std::size_t hi = bin < kLengthBinCount - 1 ? kLengthBinEdges[bin] : 0;
    return {lo, hi};
}

Motif parse_motif(std::string_view name) {
    for (int i = 0; i < kMotifCount; ++i) {
        if (motif_name(static_cast<Motif>(i)) == name) return static_cast<Motif>(i);
    }
    throw StratumError("unknown motif '" + std::string(name) + "'");
}

}  // namespace

std::string Stratum::predicate() const {
    std::ostringstream os;
    if (reactivity == Reactivity::reactive) os << "actions=reactive;";
    if (reactivity == Reactivity::inert) os << "actions=inert;";
    os << "motif=" << (any_motif ? std::string_view("any") : motif_name(motif)) << ";len="
       << length.lo << '-';
    if (length.hi == 0) {
        os << "inf";
    } else {
        os << length.hi;
    }
    return os.str();
}

bool Stratum::matches_shape(std::string_view simplified_code) const {
    if (!length.contains(simplified_code.size())) return false;
    return any_motif || motif_of(simplified_code) == motif;
}

bool Stratum::matches(const Program& program, const MachineConfig& config) const {
    if (!matches_shape(program.code())) return false;
    if (reactivity == Reactivity::any) return true;
    return reacts_to_actions(program, config) == (reactivity == Reactivity::reactive);
}

const Stratum& StratumTable::at_id(int id) const { return strata[index_of(id)]; }

std::size_t StratumTable::index_of(int id) const {
    for (std::size_t i = 0; i < strata.size(); ++i) {
        if (strata[i].id == id) return i;
    }
    throw StratumError("no stratum with id " + std::to_string(id));
}

StratumTable StratumTable::single(const MachineConfig& machine, const ScreenOptions& screening) {
    StratumTable t;
    t.scheme = std::string(kSingleScheme);
    t.machine = machine;
    t.screening = screening;
    Stratum s;
    s.id = 0;
    s.any_motif = true;
    s.length = {1, 0};
    s.mass = 1.0;
    t.strata.push_back(s);
    return t;
}

void StratumTable::write(std::ostream& os, std::string_view command_line) const {
    os << "# aiq stratum table\n";
    os << "# scheme=" << scheme << '\n';
    os << "# seed=" << seed << '\n';
    os << "# presample=" << presample << '\n';
    os << "# machine num_symbols=" << machine.num_symbols << " obs_cells=" << machine.obs_cells
       << " step_limit=" << machine.step_limit << " max_program_len=" << machine.max_program_len
       << " dry_run=" << (screening.dry_run ? 1 : 0)
       << " dry_run_cycles=" << screening.dry_run_cycles << '\n';
    if (!command_line.empty()) os << "# command: " << command_line << '\n';
    os << "# id\tpredicate\tmass\tcount\n";
    for (const Stratum& s : strata) {
        os << s.id << '\t' << s.predicate() << '\t' << std::setprecision(17) << s.mass << '\t'
           << s.count << '\n';
    }
}

StratumTable StratumTable::read(std::istream& is) {
    StratumTable t;
    t.strata.clear();
    std::string line;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::string_view v = line;
        if (v.front() == '#') {
            v.remove_prefix(1);
            while (!v.empty() && v.front() == ' ') v.remove_prefix(1);
            if (v.starts_with("scheme=")) {
                t.scheme = std::string(v.substr(7));
            } else if (v.starts_with("seed=")) {
                t.seed = parse_u64(v.substr(5), "seed");
            } else if (v.starts_with("presample=")) {
                t.presample = parse_u64(v.substr(10), "presample");
            } else if (v.starts_with("machine ")) {
                for (std::string_view kv : split(v.substr(8), ' ')) {
                    const std::size_t eq = kv.find('=');
                    if (eq == std::string_view::npos) continue;
                    const std::string_view key = kv.substr(0, eq);
                    const std::uint64_t val = parse_u64(kv.substr(eq + 1), key);
                    if (key == "num_symbols") t.machine.num_symbols = static_cast<int>(val);
                    else if (key == "obs_cells") t.machine.obs_cells = static_cast<int>(val);
                    else if (key == "step_limit") t.machine.step_limit = static_cast<std::int64_t>(val);
                    else if (key == "max_program_len") t.machine.max_program_len = val;
                    else if (key == "dry_run") t.screening.dry_run = val != 0;
                    else if (key == "dry_run_cycles") t.screening.dry_run_cycles = static_cast<int>(val);
                }
            }
            continue;
        }
        const auto fields = split(v, '\t');
        if (fields.size() != 4) throw StratumError("malformed stratum line: " + line);
        Stratum s;
        s.id = static_cast<int>(parse_u64(fields[0], "id"));
        s.count = parse_u64(fields[3], "count");
        s.mass = std::stod(std::string(fields[2]));
        for (std::string_view part : split(fields[1], ';')) {
            if (part.starts_with("actions=")) {
                const std::string_view r = part.substr(8);
                if (r == "reactive") s.reactivity = Reactivity::reactive;
                else if (r == "inert") s.reactivity = Reactivity::inert;
                else throw StratumError("bad actions= value in " + line);
            } else if (part.starts_with("motif=")) {
                const std::string_view name = part.substr(6);
                s.any_motif = name == "any";
                if (!s.any_motif) s.motif = parse_motif(name);
            } else if (part.starts_with("len=")) {
                const auto bounds = split(part.substr(4), '-');
                if (bounds.size() != 2) throw StratumError("bad length range in " + line);
                s.length.lo = parse_u64(bounds[0], "length");
                s.length.hi = bounds[1] == "inf" ? 0 : parse_u64(bounds[1], "length");
            } else {
                throw StratumError("bad predicate in " + line);
            }
        }
        t.strata.push_back(s);
    }
    if (t.strata.empty()) throw StratumError("stratum table has no strata");
    return t;
}

int classify_stratum(const Program& program, const StratumTable& table) {
    std::optional<bool> reactive;
    for (const Stratum& s : table.strata) {
        if (!s.matches_shape(program.code())) continue;
        if (s.reactivity == Reactivity::any) return s.id;
        if (!reactive) reactive = reacts_to_actions(program, table.machine);
        if (*reactive == (s.reactivity == Reactivity::reactive)) return s.id;
    }
    throw StratumError("program '" + program.to_text() + "' matches no stratum");
}

StratumTable build_stratum_table(std::uint64_t presample, std::uint64_t seed,
                                 const MachineConfig& machine, const ScreenOptions& screening,
                                 int workers, std::string_view scheme) {
    if (presample < 100'000) throw StratumError("pre-sample size must be at least 100000");
    machine.validate();
    const bool split_inert = scheme == StratumTable::kReactiveScheme;
    if (!split_inert && scheme != StratumTable::kDefaultScheme) {
        throw StratumError("unknown stratum scheme '" + std::string(scheme) + "'");
    }

    // Cells: motif x length bin, plus one trailing cell for inert programs.
    constexpr std::size_t kInertCell = kMotifCount * kLengthBinCount;
    using Counts = std::array<std::uint64_t, kInertCell + 1>;
    const auto count_range = [&](std::uint64_t begin, std::uint64_t end, Counts& counts) {
        for (std::uint64_t i = begin; i < end; ++i) {
            Rng rng(derive_seed({seed, i, static_cast<std::uint64_t>(SeedRole::program)}));
            const Program p = draw_screened(rng, machine, screening);
            if (split_inert && !reacts_to_actions(p, machine)) {
                ++counts[kInertCell];
                continue;
            }
            const int cell = static_cast<int>(motif_of(p.code())) * kLengthBinCount +
                             length_bin_of(p.code().size());
            ++counts[static_cast<std::size_t>(cell)];
        }
    };

    const std::size_t nworkers = static_cast<std::size_t>(std::max(1, workers));
    std::vector<Counts> partial(nworkers, Counts{});
    {
        std::vector<std::jthread> threads;
        for (std::size_t w = 0; w < nworkers; ++w) {
            const std::uint64_t begin = presample * w / nworkers;
            const std::uint64_t end = presample * (w + 1) / nworkers;
            threads.emplace_back([&, w, begin, end] { count_range(begin, end, partial[w]); });
        }
    }
    Counts counts{};
    for (const Counts& c : partial) {
        for (std::size_t i = 0; i < c.size(); ++i) counts[i] += c[i];
    }

    StratumTable table;
    table.scheme = std::string(scheme);
    table.seed = seed;
    table.presample = presample;
    table.machine = machine;
    table.screening = screening;
    const auto mass = [&](std::uint64_t n) {
        return static_cast<double>(n) / static_cast<double>(presample);
    };

    for (int motif = 0; motif < kMotifCount; ++motif) {
        // Groups of consecutive length bins, as [first bin, last bin].
        std::vector<std::pair<int, int>> groups;
        std::vector<std::uint64_t> group_counts;
        for (int bin = 0; bin < kLengthBinCount; ++bin) {
            groups.emplace_back(bin, bin);
            group_counts.push_back(counts[static_cast<std::size_t>(motif * kLengthBinCount + bin)]);
        }
        // Fold sparse groups downward, then a sparse bottom group upward.
        for (std::size_t g = groups.size(); g-- > 1;) {
            if (group_counts[g] < StratumTable::kMinCount) {
                groups[g - 1].second = groups[g].second;
                group_counts[g - 1] += group_counts[g];
                groups.erase(groups.begin() + static_cast<std::ptrdiff_t>(g));
                group_counts.erase(group_counts.begin() + static_cast<std::ptrdiff_t>(g));
            }
        }
        if (group_counts[0] < StratumTable::kMinCount && groups.size() > 1) {
            groups[1].first = groups[0].first;
            group_counts[1] += group_counts[0];
            groups.erase(groups.begin());
            group_counts.erase(group_counts.begin());
        }
        if (group_counts[0] < StratumTable::kMinCount) {
            throw StratumError("motif '" + std::string(motif_name(static_cast<Motif>(motif))) +
                               "' has fewer than 100 pre-sample programs; table too coarse");
        }
        for (std::size_t g = 0; g < groups.size(); ++g) {
            Stratum s;
            s.id = motif * kLengthBinCount + groups[g].first;
            s.reactivity = split_inert ? Reactivity::reactive : Reactivity::any;
            s.motif = static_cast<Motif>(motif);
            s.length = {bin_range(groups[g].first).lo, bin_range(groups[g].second).hi};
            s.count = group_counts[g];
            s.mass = mass(s.count);
            table.strata.push_back(s);
        }
    }
    if (split_inert) {
        if (counts[kInertCell] < StratumTable::kMinCount) {
            throw StratumError("inert stratum has fewer than 100 pre-sample programs");
        }
        Stratum s;
        s.id = static_cast<int>(kInertCell);
        s.reactivity = Reactivity::inert;
        s.any_motif = true;
        s.length = {1, 0};
        s.count = counts[kInertCell];
        s.mass = mass(s.count);
        table.strata.push_back(s);
    }
    return table;
}

Program sample_from_stratum(int id, const StratumTable& table, Rng& rng,
                            std::uint64_t max_attempts) {
    const Stratum& target = table.at_id(id);
    for (std::uint64_t attempt = 0; attempt < max_attempts; ++attempt) {
        ScreenResult r = screen_static(sample_program(rng, table.machine));
        auto* p = std::get_if<Program>(&r);
        if (p == nullptr || !target.matches(*p, table.machine)) continue;
        if (table.screening.dry_run &&
            !dry_run(*p, table.screening.dry_run_cycles, rng, table.machine)) {
            continue;
        }
        return std::move(*p);
    }
    throw StratumError("stratum " + std::to_string(id) + " exhausted after " +
                       std::to_string(max_attempts) + " attempts");
}

}  // namespace aiq
