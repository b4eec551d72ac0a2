#include "aiq/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace aiq {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    for (;;) {
        const std::size_t at = s.find(sep);
        out.push_back(s.substr(0, at));
        if (at == std::string_view::npos) return out;
        s.remove_prefix(at + 1);
    }
}

template <class T>
T parse_number(std::string_view s, std::string_view what) {
    s = trim(s);
    T v{};
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) {
        throw ConfigError("bad value for " + std::string(what) + ": '" + std::string(s) + "'");
    }
    return v;
}

bool parse_bool(std::string_view s, std::string_view what) {
    s = trim(s);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("bad value for " + std::string(what) + ": '" + std::string(s) + "'");
}

std::ofstream open_out(const fs::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    return os;
}

void close_out(std::ofstream& os, const fs::path& path) {
    os.close();
    if (!os) throw IoError("error writing " + path.string());
}

void write_header(std::ostream& os, std::string_view command_line, std::uint64_t seed) {
    os << "# command: " << command_line << '\n' << "# seed: " << seed << '\n';
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    if (is.bad()) throw IoError("error reading " + path.string());
    return ss.str();
}

}  // namespace

std::string_view to_string(EstimatorMode mode) {
    switch (mode) {
        case EstimatorMode::simple: return "simple";
        case EstimatorMode::stratified: return "stratified";
        case EstimatorMode::compare: return "compare";
    }
    return "?";
}

EstimatorMode estimator_mode_from_string(std::string_view text) {
    if (text == "simple") return EstimatorMode::simple;
    if (text == "stratified") return EstimatorMode::stratified;
    if (text == "compare") return EstimatorMode::compare;
    throw ConfigError("unknown mode '" + std::string(text) + "' (simple, stratified, compare)");
}

// ---------------------------------------------------------------------------
// ExperimentConfig

void ExperimentConfig::validate() const {
    try {
        machine.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (screening.dry_run_cycles < 1) throw ConfigError("dry_run_cycles must be >= 1");
    if (episodes.empty()) throw ConfigError("episodes list is empty");
    for (int t : episodes) {
        if (t < 1) throw ConfigError("episodes must be >= 1");
    }
    if (discount && !(*discount >= 0.0 && *discount < 1.0)) {
        throw ConfigError("discount must lie in [0, 1)");
    }
    if (samples < 2) throw ConfigError("samples must be >= 2");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be >= 1");
    if (agents.empty()) throw ConfigError("no agent given");
    if (mode == EstimatorMode::compare && agents.size() != 2) {
        throw ConfigError("compare mode needs exactly two agents");
    }
    for (const AgentSpec& a : agents) factory_for(a);
    if (mode == EstimatorMode::stratified && table.empty()) {
        throw ConfigError("stratified mode needs a stratum table");
    }
    if (!table.empty() && !fs::is_regular_file(table)) {
        throw ConfigError("stratum table '" + table + "' does not exist");
    }
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
    ExperimentConfig c;
    bool saw_agent = false;
    int line_no = 0;
    for (std::string_view line : split(text, '\n')) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string_view value = trim(line.substr(eq + 1));
        if (key == "num_symbols") c.machine.num_symbols = parse_number<int>(value, key);
        else if (key == "obs_cells") c.machine.obs_cells = parse_number<int>(value, key);
        else if (key == "step_limit") c.machine.step_limit = parse_number<std::int64_t>(value, key);
        else if (key == "max_program_len") c.machine.max_program_len = parse_number<std::size_t>(value, key);
        else if (key == "dry_run") c.screening.dry_run = parse_bool(value, key);
        else if (key == "dry_run_cycles") c.screening.dry_run_cycles = parse_number<int>(value, key);
        else if (key == "agent") {
            if (!saw_agent) c.agents.clear();
            saw_agent = true;
            c.agents.push_back(AgentSpec::parse(value));
        } else if (key == "mode") c.mode = estimator_mode_from_string(value);
        else if (key == "samples") c.samples = parse_number<std::uint64_t>(value, key);
        else if (key == "episodes") {
            c.episodes.clear();
            for (std::string_view t : split(value, ',')) c.episodes.push_back(parse_number<int>(t, key));
        } else if (key == "discount") {
            if (value == "none") c.discount.reset();
            else c.discount = parse_number<double>(value, key);
        } else if (key == "seed") c.seed = parse_number<std::uint64_t>(value, key);
        else if (key == "threads") c.threads = parse_number<int>(value, key);
        else if (key == "batch") c.batch = parse_number<std::uint64_t>(value, key);
        else if (key == "table") c.table = std::string(value);
        else if (key == "out") c.out = std::string(value);
        else if (key == "checkpoint") c.checkpoint = std::string(value);
        else if (key == "checkpoint_interval") c.checkpoint_interval = parse_number<std::uint64_t>(value, key);
        else if (key == "resume") c.resume = parse_bool(value, key);
        else throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str());
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream os;
    os << "num_symbols = " << machine.num_symbols << '\n'
       << "obs_cells = " << machine.obs_cells << '\n'
       << "step_limit = " << machine.step_limit << '\n'
       << "max_program_len = " << machine.max_program_len << '\n'
       << "dry_run = " << (screening.dry_run ? "true" : "false") << '\n'
       << "dry_run_cycles = " << screening.dry_run_cycles << '\n';
    for (const AgentSpec& a : agents) os << "agent = " << a.to_string() << '\n';
    os << "mode = " << to_string(mode) << '\n' << "samples = " << samples << '\n' << "episodes = ";
    for (std::size_t i = 0; i < episodes.size(); ++i) os << (i ? "," : "") << episodes[i];
    os << '\n'
       << "discount = " << (discount ? fmt(*discount) : "none") << '\n'
       << "seed = " << seed << '\n'
       << "threads = " << threads << '\n'
       << "batch = " << batch << '\n'
       << "table = " << table << '\n'
       << "out = " << out << '\n'
       << "checkpoint = " << checkpoint << '\n'
       << "checkpoint_interval = " << checkpoint_interval << '\n'
       << "resume = " << (resume ? "true" : "false") << '\n';
    return os.str();
}

std::string ExperimentConfig::fingerprint() const {
    ExperimentConfig c = *this;
    c.threads = 1;
    c.out.clear();
    c.checkpoint.clear();
    c.checkpoint_interval = 1;
    c.resume = false;
    return c.to_text();
}

// ---------------------------------------------------------------------------
// Stratum table files

StratumTable load_stratum_table(const fs::path& path) {
    std::istringstream is(read_file(path));
    try {
        return StratumTable::read(is);
    } catch (const StratumError& e) {
        throw IoError(path.string() + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw IoError(path.string() + ": " + e.what());
    } catch (const std::out_of_range& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

void save_stratum_table(const StratumTable& table, const fs::path& path,
                        std::string_view command_line) {
    std::ofstream os = open_out(path);
    table.write(os, command_line);
    close_out(os, path);
}

// ---------------------------------------------------------------------------
// run_experiment

namespace {

json row_json(const SummaryRow& r) {
    return json::array({r.agent, r.mode, r.episodes, r.pairs, r.mean, r.ci, r.std_error, r.discards});
}

SummaryRow row_from(const json& j) {
    SummaryRow r;
    r.agent = j.at(0).get<std::string>();
    r.mode = j.at(1).get<std::string>();
    r.episodes = j.at(2).get<int>();
    r.pairs = j.at(3).get<std::uint64_t>();
    r.mean = j.at(4).get<double>();
    r.ci = j.at(5).get<double>();
    r.std_error = j.at(6).get<double>();
    r.discards = j.at(7).get<std::uint64_t>();
    return r;
}

SummaryRow summary_row(std::string agent, const ExperimentConfig& c, int t, const Estimate& e) {
    return {std::move(agent), std::string(to_string(c.mode)), t, e.n, e.mean, e.ci_halfwidth,
            e.std_error, e.discards};
}

struct Job {
    std::size_t agent = 0;  // unused in compare mode
    int episodes = 0;
};

std::string job_stem(const ExperimentConfig& c, const Job& job) {
    const std::string t = "_T" + std::to_string(job.episodes);
    if (c.mode == EstimatorMode::compare) return "compare" + t;
    return "a" + std::to_string(job.agent) + t;
}

void write_trial_log(const fs::path& path, const SamplingState& state, bool with_agent,
                     std::string_view command_line, std::uint64_t seed) {
    std::ofstream os = open_out(path);
    write_header(os, command_line, seed);
    os << "sample_idx\tstratum\t" << (with_agent ? "agent\t" : "") << "program\tscore0\tscore1\tstatus\n";
    for (const TrialRecord& r : state.log) {
        os << r.slot << '\t' << r.stratum << '\t';
        if (with_agent) os << r.agent << '\t';
        os << r.program << '\t' << fmt(r.score0) << '\t' << fmt(r.score1) << '\t'
           << to_string(r.status) << '\n';
    }
    close_out(os, path);
}

void write_strata(const fs::path& path, const Estimate& e, std::string_view command_line,
                  std::uint64_t seed) {
    std::ofstream os = open_out(path);
    write_header(os, command_line, seed);
    os << "id\tpredicate\tmass\tn\tmean\tsd\n";
    for (const StratumRow& r : e.strata) {
        os << r.id << '\t' << r.predicate << '\t' << fmt(r.mass) << '\t' << r.n << '\t' << fmt(r.mean)
           << '\t' << fmt(r.sd) << '\n';
    }
    close_out(os, path);
}

struct Checkpoint {
    std::string fingerprint;
    std::size_t job = 0;
    std::vector<SummaryRow> summary;
    std::vector<TimingRow> timing;
    std::optional<SamplingState> state;
};

void save_checkpoint(const fs::path& path, const Checkpoint& cp) {
    json j;
    j["fingerprint"] = cp.fingerprint;
    j["job"] = cp.job;
    j["summary"] = json::array();
    for (const SummaryRow& r : cp.summary) j["summary"].push_back(row_json(r));
    j["timing"] = json::array();
    for (const TimingRow& t : cp.timing) {
        j["timing"].push_back(json::array({t.agent, t.episodes, t.pairs, t.discards, t.seconds}));
    }
    j["state"] = cp.state ? json::parse(cp.state->to_json()) : json();
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os = open_out(tmp);
        os << j.dump() << '\n';
        close_out(os, tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& path) {
    try {
        const json j = json::parse(read_file(path));
        Checkpoint cp;
        cp.fingerprint = j.at("fingerprint").get<std::string>();
        cp.job = j.at("job").get<std::size_t>();
        for (const json& r : j.at("summary")) cp.summary.push_back(row_from(r));
        for (const json& t : j.at("timing")) {
            cp.timing.push_back({t.at(0).get<std::string>(), t.at(1).get<int>(),
                                 t.at(2).get<std::uint64_t>(), t.at(3).get<std::uint64_t>(),
                                 t.at(4).get<double>()});
        }
        if (!j.at("state").is_null()) cp.state = SamplingState::from_json(j.at("state").dump());
        return cp;
    } catch (const json::exception& e) {
        throw IoError("corrupt checkpoint " + path.string() + ": " + e.what());
    }
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, std::string_view command_line,
                                const RunControl& control) {
    config.validate();
    std::optional<StratumTable> table;
    if (config.mode == EstimatorMode::stratified) {
        table = load_stratum_table(config.table);
        if (table->machine != config.machine || table->screening != config.screening) {
            throw ConfigError("stratum table " + config.table +
                              " was built for a different machine or screening setup");
        }
    }

    const fs::path out_dir(config.out);
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

    std::vector<Job> jobs;
    if (config.mode == EstimatorMode::compare) {
        for (int t : config.episodes) jobs.push_back({0, t});
    } else {
        for (std::size_t a = 0; a < config.agents.size(); ++a) {
            for (int t : config.episodes) jobs.push_back({a, t});
        }
    }

    Checkpoint cp;
    cp.fingerprint = config.fingerprint();
    const bool checkpointing = !config.checkpoint.empty();
    if (checkpointing && config.resume && fs::exists(config.checkpoint)) {
        cp = load_checkpoint(config.checkpoint);
        if (cp.fingerprint != config.fingerprint()) {
            throw ConfigError("checkpoint " + config.checkpoint + " belongs to a different experiment");
        }
    }

    ExperimentResult result;
    std::uint64_t barriers = 0;
    bool stopped = false;

    for (std::size_t j = cp.job; j < jobs.size(); ++j) {
        const Job& job = jobs[j];
        EvalConfig ec_cfg;
        ec_cfg.machine = config.machine;
        ec_cfg.screening = config.screening;
        ec_cfg.trial = {job.episodes, config.discount};
        ec_cfg.master_seed = config.seed;
        ec_cfg.workers = config.threads;
        ec_cfg.batch = config.batch;

        SamplingControl sc;
        sc.resume_from = std::move(cp.state);
        cp.state.reset();
        sc.on_barrier = [&](const SamplingState& state) {
            if (state.pairs() >= config.samples) return true;
            ++barriers;
            const bool stop = control.stop_after_rounds && barriers >= *control.stop_after_rounds;
            if (checkpointing && (stop || state.rounds % config.checkpoint_interval == 0)) {
                Checkpoint now{cp.fingerprint, j, cp.summary, cp.timing, state};
                save_checkpoint(config.checkpoint, now);
            }
            if (stop) stopped = true;
            return !stop;
        };

        const auto start = std::chrono::steady_clock::now();
        SamplingState state;
        const std::string stem = job_stem(config, job);
        std::vector<SummaryRow> rows;
        std::optional<Estimate> strata;
        if (config.mode == EstimatorMode::compare) {
            const AgentSpec& a = config.agents[0];
            const AgentSpec& b = config.agents[1];
            ComparisonResult r = compare_crn(factory_for(a), factory_for(b), config.samples, ec_cfg,
                                             &state, std::move(sc));
            if (stopped) break;
            Estimate ea = r.delta, eb = r.delta;
            ea.mean = r.mean_a;
            ea.std_error = r.stderr_a;
            ea.ci_halfwidth = kZ95 * r.stderr_a;
            eb.mean = r.mean_b;
            eb.std_error = r.stderr_b;
            eb.ci_halfwidth = kZ95 * r.stderr_b;
            rows.push_back(summary_row(a.to_string(), config, job.episodes, ea));
            rows.push_back(summary_row(b.to_string(), config, job.episodes, eb));
            rows.push_back(summary_row(b.to_string() + " - " + a.to_string(), config, job.episodes,
                                       r.delta));
        } else {
            const AgentSpec& a = config.agents[job.agent];
            Estimate e = table ? adaptive_stratified(factory_for(a), *table, config.samples, ec_cfg,
                                                     &state, std::move(sc))
                               : simple_mc(factory_for(a), config.samples, ec_cfg, &state,
                                           std::move(sc));
            if (stopped) break;
            rows.push_back(summary_row(a.to_string(), config, job.episodes, e));
            if (table) strata = std::move(e);
        }
        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

        const fs::path log_path = out_dir / ("trials_" + stem + ".tsv");
        write_trial_log(log_path, state, config.mode == EstimatorMode::compare, command_line,
                        config.seed);
        result.files.push_back(log_path);
        if (strata) {
            const fs::path strata_path = out_dir / ("strata_" + stem + ".tsv");
            write_strata(strata_path, *strata, command_line, config.seed);
            result.files.push_back(strata_path);
        }
        for (SummaryRow& r : rows) cp.summary.push_back(std::move(r));
        cp.timing.push_back({config.mode == EstimatorMode::compare
                                 ? config.agents[1].to_string() + " - " + config.agents[0].to_string()
                                 : config.agents[job.agent].to_string(),
                             job.episodes, state.pairs(), state.discards, seconds});
        cp.job = j + 1;
        if (checkpointing) save_checkpoint(config.checkpoint, cp);
    }

    result.summary = cp.summary;
    result.timing = cp.timing;
    if (stopped) {
        result.complete = false;
        return result;
    }

    const fs::path summary_path = out_dir / "summary.tsv";
    {
        std::ofstream os = open_out(summary_path);
        write_header(os, command_line, config.seed);
        os << "agent\tmode\tepisodes\tpairs\tmean\tci\tstderr\tdiscards\n";
        for (const SummaryRow& r : result.summary) {
            os << r.agent << '\t' << r.mode << '\t' << r.episodes << '\t' << r.pairs << '\t'
               << fmt(r.mean) << '\t' << fmt(r.ci) << '\t' << fmt(r.std_error) << '\t' << r.discards
               << '\n';
        }
        close_out(os, summary_path);
    }
    const fs::path timing_path = out_dir / "timing.tsv";
    {
        std::ofstream os = open_out(timing_path);
        write_header(os, command_line, config.seed);
        os << "agent\tepisodes\tpairs\tdiscards\tdiscard_rate\tseconds\n";
        for (const TimingRow& t : result.timing) {
            const double attempts = static_cast<double>(t.pairs + t.discards);
            os << t.agent << '\t' << t.episodes << '\t' << t.pairs << '\t' << t.discards << '\t'
               << fmt(attempts > 0 ? static_cast<double>(t.discards) / attempts : 0.0) << '\t'
               << fmt(t.seconds) << '\n';
        }
        close_out(os, timing_path);
    }
    result.files.insert(result.files.begin(), {summary_path, timing_path});
    return result;
}

SummaryFile read_summary(std::istream& is) {
    SummaryFile f;
    std::string line;
    bool header = false;
    while (std::getline(is, line)) {
        std::string_view v = trim(line);
        if (v.empty()) continue;
        if (v.starts_with("# command: ")) {
            f.command = std::string(v.substr(11));
            continue;
        }
        if (v.starts_with("# seed: ")) {
            f.seed = parse_number<std::uint64_t>(v.substr(8), "seed");
            continue;
        }
        if (v.front() == '#') continue;
        if (!header) {
            if (!v.starts_with("agent\tmode\t")) throw IoError("not a summary file");
            header = true;
            continue;
        }
        const auto fields = split(v, '\t');
        if (fields.size() != 8) throw IoError("malformed summary row: " + line);
        try {
            SummaryRow r;
            r.agent = std::string(fields[0]);
            r.mode = std::string(fields[1]);
            r.episodes = parse_number<int>(fields[2], "episodes");
            r.pairs = parse_number<std::uint64_t>(fields[3], "pairs");
            r.mean = parse_number<double>(fields[4], "mean");
            r.ci = parse_number<double>(fields[5], "ci");
            r.std_error = parse_number<double>(fields[6], "stderr");
            r.discards = parse_number<std::uint64_t>(fields[7], "discards");
            f.rows.push_back(std::move(r));
        } catch (const ConfigError& e) {
            throw IoError(std::string("malformed summary row: ") + e.what());
        }
    }
    if (!header) throw IoError("not a summary file");
    return f;
}

// ---------------------------------------------------------------------------
// Distribution analysis

double CdfTable::cdf_at(std::size_t length) const {
    if (length == 0 || rows.empty()) return 0.0;
    return rows[std::min(length, rows.size()) - 1].cdf;
}

double CdfTable::overlay_cdf_at(std::size_t length) const {
    if (length == 0 || rows.empty()) return 0.0;
    return rows[std::min(length, rows.size()) - 1].overlay_cdf;
}

void CdfTable::write(std::ostream& os, std::string_view command_line, std::uint64_t seed) const {
    write_header(os, command_line, seed);
    os << "# programs: " << programs << '\n';
    const bool overlay = overlay_programs > 0;
    if (overlay) os << "# overlay_programs: " << overlay_programs << '\n';
    os << "length\tcount\tcdf" << (overlay ? "\toverlay_count\toverlay_cdf" : "") << '\n';
    for (const CdfRow& r : rows) {
        os << r.length << '\t' << r.count << '\t' << fmt(r.cdf);
        if (overlay) os << '\t' << r.overlay_count << '\t' << fmt(r.overlay_cdf);
        os << '\n';
    }
}

CdfTable run_distribution_analysis(std::uint64_t n, std::uint64_t seed, const MachineConfig& machine,
                                   const ScreenOptions& screening, int workers,
                                   const std::vector<std::size_t>& overlay) {
    if (n < 1000) throw ConfigError("distribution analysis needs at least 1000 programs");
    machine.validate();
    std::vector<std::size_t> lengths(n);
    parallel_for(n, workers, [&](std::size_t, std::size_t i) {
        Rng rng(derive_seed({seed, i, static_cast<std::uint64_t>(SeedRole::program)}));
        lengths[i] = draw_screened(rng, machine, screening).code().size();
    });

    std::size_t longest = 0;
    for (std::size_t l : lengths) longest = std::max(longest, l);
    for (std::size_t l : overlay) longest = std::max(longest, l);

    CdfTable t;
    t.programs = n;
    t.overlay_programs = overlay.size();
    t.rows.resize(longest);
    for (std::size_t i = 0; i < longest; ++i) t.rows[i].length = i + 1;
    for (std::size_t l : lengths) ++t.rows[l - 1].count;
    for (std::size_t l : overlay) {
        if (l > 0) ++t.rows[l - 1].overlay_count;
    }
    std::uint64_t run = 0, orun = 0;
    for (CdfRow& r : t.rows) {
        run += r.count;
        orun += r.overlay_count;
        r.cdf = static_cast<double>(run) / static_cast<double>(n);
        if (!overlay.empty()) r.overlay_cdf = static_cast<double>(orun) / static_cast<double>(overlay.size());
    }
    return t;
}

std::vector<std::size_t> lengths_from_trial_log(std::istream& is) {
    std::vector<std::size_t> out;
    std::string line;
    std::vector<std::string> columns;
    while (std::getline(is, line)) {
        std::string_view v = trim(line);
        if (v.empty() || v.front() == '#') continue;
        const auto fields = split(v, '\t');
        if (columns.empty()) {
            for (std::string_view f : fields) columns.emplace_back(f);
            continue;
        }
        if (fields.size() != columns.size()) throw IoError("malformed trial log row: " + line);
        std::string_view program, status, agent;
        for (std::size_t i = 0; i < columns.size(); ++i) {
            if (columns[i] == "program") program = fields[i];
            else if (columns[i] == "status") status = fields[i];
            else if (columns[i] == "agent") agent = fields[i];
        }
        // A compare slot succeeded iff its second agent's record is ok.
        if (status == "ok" && (agent.empty() || agent == "b")) out.push_back(program.size());
    }
    if (columns.empty()) throw IoError("not a trial log");
    return out;
}

// ---------------------------------------------------------------------------
// Sweeps

SweepAxis parse_sweep_axis(std::string_view text) {
    const std::size_t eq = text.find('=');
    if (eq == std::string_view::npos || eq == 0) {
        throw ConfigError("grid axis must look like name=v1,v2,..., got '" + std::string(text) + "'");
    }
    SweepAxis axis{std::string(trim(text.substr(0, eq))), {}};
    for (std::string_view v : split(text.substr(eq + 1), ',')) {
        v = trim(v);
        if (v.empty()) throw ConfigError("empty value in grid axis '" + std::string(text) + "'");
        axis.second.emplace_back(v);
    }
    return axis;
}

std::vector<AgentSpec> expand_grid(const AgentSpec& base, const std::vector<SweepAxis>& grid) {
    if (base.kind == AgentKind::external && !grid.empty()) {
        throw ConfigError("external agents cannot be swept");
    }
    std::vector<std::string> texts{base.to_string()};
    for (const SweepAxis& axis : grid) {
        if (axis.second.empty()) throw ConfigError("grid axis '" + axis.first + "' has no values");
        std::vector<std::string> next;
        for (const std::string& t : texts) {
            for (const std::string& v : axis.second) {
                next.push_back(t + (t.find(':') == std::string::npos ? ":" : ",") + axis.first + "=" + v);
            }
        }
        texts = std::move(next);
    }
    std::vector<AgentSpec> specs;
    for (const std::string& t : texts) specs.push_back(AgentSpec::parse(t));
    return specs;
}

void SweepResult::write(std::ostream& os, std::string_view command_line, std::uint64_t seed) const {
    write_header(os, command_line, seed);
    os << "agent\tmean\tci\tstderr\tpairs\tdiscards\tbest\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Estimate& e = rows[i].estimate;
        os << rows[i].spec.to_string() << '\t' << fmt(e.mean) << '\t' << fmt(e.ci_halfwidth) << '\t'
           << fmt(e.std_error) << '\t' << e.n << '\t' << e.discards << '\t' << (i == best ? 1 : 0)
           << '\n';
    }
}

SweepResult parameter_sweep(const AgentSpec& base, const std::vector<SweepAxis>& grid,
                            std::uint64_t pairs, const EvalConfig& config, const StratumTable* table) {
    SweepResult r;
    for (AgentSpec& spec : expand_grid(base, grid)) {
        const AgentFactory f = factory_for(spec);
        Estimate e = table ? adaptive_stratified(f, *table, pairs, config) : simple_mc(f, pairs, config);
        r.rows.push_back({std::move(spec), std::move(e)});
    }
    for (std::size_t i = 1; i < r.rows.size(); ++i) {
        if (r.rows[i].estimate.mean > r.rows[r.best].estimate.mean) r.best = i;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Plot data

std::vector<SeriesPoint> plot_series(const std::vector<SummaryRow>& rows) {
    std::map<std::pair<std::string, int>, SeriesPoint> points;
    for (const SummaryRow& r : rows) {
        points[{r.agent, r.episodes}] = {r.agent, r.episodes, r.mean, r.mean - r.ci, r.mean + r.ci};
    }
    std::vector<SeriesPoint> out;
    for (auto& [key, p] : points) out.push_back(std::move(p));
    return out;
}

void write_plot_data(std::ostream& os, const std::vector<SeriesPoint>& points,
                     std::string_view command_line, const std::vector<std::uint64_t>& seeds) {
    os << "# command: " << command_line << '\n' << "# seed:";
    for (std::uint64_t s : seeds) os << ' ' << s;
    os << '\n' << "agent\tepisodes\tmean\tlower\tupper\n";
    for (const SeriesPoint& p : points) {
        os << p.agent << '\t' << p.episodes << '\t' << fmt(p.mean) << '\t' << fmt(p.lower) << '\t'
           << fmt(p.upper) << '\n';
    }
}

}  // namespace aiq
