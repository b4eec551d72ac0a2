#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "aiq/machine.hpp"
#include "aiq/rng.hpp"

namespace aiq {

/// A program exactly as drawn, before simplification.
struct RawProgram {
    bool negate = false;
    std::string code;
};

/// Options for the screening step that follows simplification.
struct ScreenOptions {
    bool dry_run = true;
    int dry_run_cycles = 20;

    friend bool operator==(const ScreenOptions&, const ScreenOptions&) = default;
};

/// Draws negate with a fair coin, then code symbols uniformly from the nine
/// instructions plus an end marker until the end marker appears. Draws that
/// reach config.max_program_len are rejected and redrawn.
RawProgram sample_program(Rng& rng, const MachineConfig& config);

/// Deletes adjacent `+-`, `-+`, `<>`, `><` and `[]` pairs to a fixpoint.
std::string simplify(std::string_view code);

enum class RejectReason { empty_after_simplify, no_read, no_write, dry_run_timeout };

std::string_view to_string(RejectReason reason);

struct Reject {
    RejectReason reason;
};

using ScreenResult = std::variant<Program, Reject>;

/// Simplifies and applies the static checks only (no dry run).
ScreenResult screen_static(const RawProgram& raw);

/// Runs `cycles` cycles against uniformly random actions; true if none hit
/// the step limit.
bool dry_run(const Program& program, int cycles, Rng& rng, const MachineConfig& config);

ScreenResult screen(const RawProgram& raw, Rng& rng, const MachineConfig& config,
                    const ScreenOptions& options = {});

// ---------------------------------------------------------------------------
// Strata

enum class Motif : int { read_write_adjacent = 0, random = 1, loop = 2, none = 3 };
inline constexpr int kMotifCount = 4;

/// Upper edges of the default length bins: 1-5, 6-10, 11-20, 21-40, >40.
inline constexpr std::size_t kLengthBinEdges[] = {5, 10, 20, 40};
inline constexpr int kLengthBinCount = 5;

Motif motif_of(std::string_view code);

/// Whether the reward stream depends on the agent's actions. Decided by
/// running the program under pairs of different fixed action sequences with
/// a shared fixed `%` stream and comparing rewards cycle by cycle, so the
/// answer is a pure function of the code and config. The probe is finite:
/// programs judged inert usually, but not always, score zero as a pair.
bool reacts_to_actions(const Program& program, const MachineConfig& config, int cycles = 20,
                       int probes = 3);

enum class Reactivity { any, reactive, inert };

int length_bin_of(std::size_t length);
std::string_view motif_name(Motif motif);

/// Length range covered by a stratum; hi = 0 means unbounded.
struct LengthRange {
    std::size_t lo = 1;
    std::size_t hi = 0;

    bool contains(std::size_t n) const { return n >= lo && (hi == 0 || n <= hi); }
    friend bool operator==(const LengthRange&, const LengthRange&) = default;
};

struct Stratum {
    int id = 0;
    Reactivity reactivity = Reactivity::any;
    bool any_motif = false;
    Motif motif = Motif::none;
    LengthRange length;
    double mass = 0.0;
    std::uint64_t count = 0;

    std::string predicate() const;

    /// Cheap part of the predicate: motif and length only.
    bool matches_shape(std::string_view simplified_code) const;
    bool matches(const Program& program, const MachineConfig& config) const;

    friend bool operator==(const Stratum&, const Stratum&) = default;
};

class StratumError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Partition of screened program space with masses estimated from a
/// recorded pre-sample.
struct StratumTable {
    static constexpr std::string_view kDefaultScheme = "motif-length-v1";
    /// Inert programs in one stratum, reactive ones split by motif x length.
    static constexpr std::string_view kReactiveScheme = "reactive-motif-length-v1";
    static constexpr std::string_view kSingleScheme = "single-v1";
    static constexpr std::uint64_t kMinCount = 100;

    std::string scheme{kDefaultScheme};
    std::uint64_t seed = 0;
    std::uint64_t presample = 0;
    MachineConfig machine;
    ScreenOptions screening;
    std::vector<Stratum> strata;

    std::size_t size() const { return strata.size(); }
    const Stratum& at_id(int id) const;
    std::size_t index_of(int id) const;

    /// Single stratum of mass 1 covering every screened program.
    static StratumTable single(const MachineConfig& machine, const ScreenOptions& screening);

    void write(std::ostream& os, std::string_view command_line = {}) const;
    static StratumTable read(std::istream& is);

    friend bool operator==(const StratumTable&, const StratumTable&) = default;
};

/// Stratum id for a screened program. Throws StratumError if no stratum
/// matches, which cannot happen for tables produced by build_stratum_table.
int classify_stratum(const Program& program, const StratumTable& table);

/// Draws N0 accepted programs and tabulates the motif x length partition of
/// `scheme` (kDefaultScheme or kReactiveScheme). Sparse cells (count < 100)
/// are folded into the adjacent length bin of the same motif.
StratumTable build_stratum_table(std::uint64_t presample, std::uint64_t seed,
                                 const MachineConfig& machine, const ScreenOptions& screening = {},
                                 int workers = 1,
                                 std::string_view scheme = StratumTable::kDefaultScheme);

/// Draws the next screened program from rng.
Program draw_screened(Rng& rng, const MachineConfig& machine, const ScreenOptions& screening);

/// Rejection-samples a screened program whose stratum is `id`. Gives up with
/// StratumError after `max_attempts` raw draws.
Program sample_from_stratum(int id, const StratumTable& table, Rng& rng,
                            std::uint64_t max_attempts = 50'000'000);

}  // namespace aiq
