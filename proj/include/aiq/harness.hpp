#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "aiq/agents.hpp"
#include "aiq/estimator.hpp"
#include "aiq/machine.hpp"
#include "aiq/sampler.hpp"

namespace aiq {

/// File-system failures: unreadable inputs, unwritable outputs, corrupt files.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class EstimatorMode { simple, stratified, compare };

std::string_view to_string(EstimatorMode mode);
EstimatorMode estimator_mode_from_string(std::string_view text);

/// One experiment, possibly over several agents and episode lengths.
///
/// Config file format is one `key = value` per line, `#` starts a comment.
/// Keys: num_symbols, obs_cells, step_limit, max_program_len, dry_run,
/// dry_run_cycles, agent (repeatable), mode, samples, episodes (comma list),
/// discount (`none` or a value in [0,1)), seed, threads, batch, table, out,
/// checkpoint, checkpoint_interval, resume.
struct ExperimentConfig {
    MachineConfig machine;
    ScreenOptions screening;
    std::vector<AgentSpec> agents;
    EstimatorMode mode = EstimatorMode::simple;
    std::uint64_t samples = 10'000;  // N, completed antithetic pairs
    std::vector<int> episodes{1000};
    std::optional<double> discount;
    std::uint64_t seed = 1;
    int threads = 1;
    std::uint64_t batch = 0;
    std::string table;         // stratum table path; stratified mode only
    std::string out = ".";     // output directory
    std::string checkpoint;    // empty disables checkpointing
    std::uint64_t checkpoint_interval = 1;  // rounds between checkpoint writes
    bool resume = false;

    /// Throws ConfigError on inconsistent settings or missing input files.
    void validate() const;

    static ExperimentConfig parse(std::string_view text);
    static ExperimentConfig load(const std::filesystem::path& path);
    std::string to_text() const;

    /// Settings that determine results; checkpoints refuse to resume if this
    /// differs.
    std::string fingerprint() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

/// Reads a stratum table, mapping stream and format failures to IoError.
StratumTable load_stratum_table(const std::filesystem::path& path);
void save_stratum_table(const StratumTable& table, const std::filesystem::path& path,
                        std::string_view command_line);

/// One line of summary.tsv.
struct SummaryRow {
    std::string agent;
    std::string mode;
    int episodes = 0;
    std::uint64_t pairs = 0;
    double mean = 0.0;
    double ci = 0.0;
    double std_error = 0.0;
    std::uint64_t discards = 0;

    friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

struct TimingRow {
    std::string agent;
    int episodes = 0;
    std::uint64_t pairs = 0;
    std::uint64_t discards = 0;
    double seconds = 0.0;
};

struct ExperimentResult {
    std::vector<SummaryRow> summary;
    std::vector<TimingRow> timing;
    std::vector<std::filesystem::path> files;
    bool complete = true;  // false when stopped early by RunControl
};

/// Test and tooling hooks for run_experiment.
struct RunControl {
    /// Stop (as if killed) after this many round barriers in total.
    std::optional<std::uint64_t> stop_after_rounds;
};

/// Runs every (agent, T) job of the config in order, writing summary.tsv,
/// timing.tsv and per-job trial logs (and stratum tables in stratified mode)
/// to config.out. Each file starts with `# command:` and `# seed:` lines.
/// In compare mode the two agents share one program sample and the summary
/// carries rows for each agent and for their difference.
ExperimentResult run_experiment(const ExperimentConfig& config, std::string_view command_line,
                                const RunControl& control = {});

struct SummaryFile {
    std::string command;
    std::uint64_t seed = 0;
    std::vector<SummaryRow> rows;
};

SummaryFile read_summary(std::istream& is);

// ---------------------------------------------------------------------------
// Program length distribution

struct CdfRow {
    std::size_t length = 0;
    std::uint64_t count = 0;
    double cdf = 0.0;
    std::uint64_t overlay_count = 0;
    double overlay_cdf = 0.0;
};

struct CdfTable {
    std::uint64_t programs = 0;
    std::uint64_t overlay_programs = 0;
    std::vector<CdfRow> rows;  // one per length from 1 to the longest seen

    /// Fraction of programs with simplified length <= `length`.
    double cdf_at(std::size_t length) const;
    double overlay_cdf_at(std::size_t length) const;

    void write(std::ostream& os, std::string_view command_line, std::uint64_t seed) const;
};

/// Draws n >= 1000 screened programs (program i from its own derived seed)
/// and tabulates simplified lengths. `overlay` holds lengths of programs a
/// stratified evaluation actually consumed.
CdfTable run_distribution_analysis(std::uint64_t n, std::uint64_t seed,
                                   const MachineConfig& machine = {},
                                   const ScreenOptions& screening = {}, int workers = 1,
                                   const std::vector<std::size_t>& overlay = {});

/// Lengths of successfully scored programs in a trial log file.
std::vector<std::size_t> lengths_from_trial_log(std::istream& is);

// ---------------------------------------------------------------------------
// Parameter sweeps

/// Axis of a sweep grid: parameter name and the values to try.
using SweepAxis = std::pair<std::string, std::vector<std::string>>;

/// Parses `name=v1,v2,...`.
SweepAxis parse_sweep_axis(std::string_view text);

/// Cartesian product of the axes applied to `base`, first axis slowest.
std::vector<AgentSpec> expand_grid(const AgentSpec& base, const std::vector<SweepAxis>& grid);

struct SweepRow {
    AgentSpec spec;
    Estimate estimate;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::size_t best = 0;  // highest mean; first on ties

    const AgentSpec& best_spec() const { return rows.at(best).spec; }
    void write(std::ostream& os, std::string_view command_line, std::uint64_t seed) const;
};

/// Evaluates every grid point on the same program sample (same master seed
/// and slot streams). Uses stratified sampling when `table` is given.
SweepResult parameter_sweep(const AgentSpec& base, const std::vector<SweepAxis>& grid,
                            std::uint64_t pairs, const EvalConfig& config,
                            const StratumTable* table = nullptr);

// ---------------------------------------------------------------------------
// Plot data

struct SeriesPoint {
    std::string agent;
    int episodes = 0;
    double mean = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

/// Collects agent x T series from summary rows, sorted by agent then T.
/// Later rows for the same (agent, T) replace earlier ones.
std::vector<SeriesPoint> plot_series(const std::vector<SummaryRow>& rows);

/// `seeds` are the master seeds of the summaries the points came from.
void write_plot_data(std::ostream& os, const std::vector<SeriesPoint>& points,
                     std::string_view command_line, const std::vector<std::uint64_t>& seeds);

}  // namespace aiq
