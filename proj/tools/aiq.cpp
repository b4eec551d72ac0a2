// aiq: command-line front end for building stratum tables, estimating agent
// scores, comparing agents, sweeping parameters and exporting plot data.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aiq/harness.hpp"

namespace {

using namespace aiq;

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

std::string quote(const std::string& arg) {
    if (!arg.empty() && arg.find_first_of(" \t'\"\\$`*?;&|<>()") == std::string::npos) return arg;
    std::string q = "'";
    for (char c : arg) {
        if (c == '\'') q += "'\\''";
        else q += c;
    }
    return q + "'";
}

std::string command_line(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) s += (i ? " " : "") + quote(argv[i]);
    return s;
}

// Machine and screening flags shared by most subcommands.
struct MachineFlags {
    int num_symbols = 5;
    int obs_cells = 1;
    std::int64_t step_limit = 1000;
    std::size_t max_program_len = 1000;
    bool no_dry_run = false;
    int dry_run_cycles = 20;
    std::vector<CLI::Option*> options;

    void add(CLI::App* app) {
        options = {
            app->add_option("--num-symbols", num_symbols, "Tape alphabet size m")->capture_default_str(),
            app->add_option("--obs-cells", obs_cells, "Observation cells per cycle")->capture_default_str(),
            app->add_option("--step-limit", step_limit, "Instruction limit per cycle")->capture_default_str(),
            app->add_option("--max-program-len", max_program_len, "Longest raw program drawn")
                ->capture_default_str(),
            app->add_flag("--no-dry-run", no_dry_run, "Skip the dry-run screen"),
            app->add_option("--dry-run-cycles", dry_run_cycles, "Cycles in the dry-run screen")
                ->capture_default_str(),
        };
    }

    void apply(MachineConfig& m, ScreenOptions& s) const {
        if (options[0]->count()) m.num_symbols = num_symbols;
        if (options[1]->count()) m.obs_cells = obs_cells;
        if (options[2]->count()) m.step_limit = step_limit;
        if (options[3]->count()) m.max_program_len = max_program_len;
        if (options[4]->count()) s.dry_run = !no_dry_run;
        if (options[5]->count()) s.dry_run_cycles = dry_run_cycles;
    }

    std::pair<MachineConfig, ScreenOptions> resolve() const {
        std::pair<MachineConfig, ScreenOptions> r;
        apply(r.first, r.second);
        try {
            r.first.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
        if (r.second.dry_run_cycles < 1) throw ConfigError("dry_run_cycles must be >= 1");
        return r;
    }
};

void print_machine(std::ostream& os, const MachineConfig& m, const ScreenOptions& s) {
    os << "num_symbols = " << m.num_symbols << '\n'
       << "obs_cells = " << m.obs_cells << '\n'
       << "step_limit = " << m.step_limit << '\n'
       << "max_program_len = " << m.max_program_len << '\n'
       << "dry_run = " << (s.dry_run ? "true" : "false") << '\n'
       << "dry_run_cycles = " << s.dry_run_cycles << '\n';
}

// Flags of eval and compare, layered over an optional config file.
struct ExperimentFlags {
    MachineFlags machine;
    std::string config_path;
    std::vector<std::string> agents;
    std::string agent_a, agent_b;
    std::string mode;
    std::uint64_t samples = 10'000;
    std::vector<int> episodes{1000};
    std::string discount;
    std::uint64_t seed = 1;
    int threads = 1;
    std::uint64_t batch = 0;
    std::string table, out, checkpoint;
    std::uint64_t checkpoint_interval = 1;
    bool resume = false;
    bool print_config = false;
    std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> setters;

    template <class T>
    void bind(CLI::Option* opt, T ExperimentConfig::*field, T* value) {
        setters.emplace_back(opt, [field, value](ExperimentConfig& c) { c.*field = *value; });
    }

    void add(CLI::App* app, bool compare) {
        machine.add(app);
        app->add_option("--config", config_path, "Config file (key = value lines); flags override it")
            ->check(CLI::ExistingFile);
        if (compare) {
            app->add_option("--agent-a", agent_a, "Baseline agent spec")->required();
            app->add_option("--agent-b", agent_b, "Candidate agent spec")->required();
        } else {
            auto* o = app->add_option("--agent", agents,
                                      "Agent spec, e.g. random, freq:epsilon=0.05, "
                                      "q:alpha=0.5,gamma=0.85,lambda=0.9,epsilon=0.01, "
                                      "external:timeout=10,cmd=PROGRAM; repeatable");
            setters.emplace_back(o, [this](ExperimentConfig& c) {
                c.agents.clear();
                for (const std::string& a : agents) c.agents.push_back(AgentSpec::parse(a));
            });
            auto* m = app->add_option("--mode", mode, "simple or stratified (default: stratified with --table)")
                          ->check(CLI::IsMember({"simple", "stratified"}));
            setters.emplace_back(m, [this](ExperimentConfig& c) { c.mode = estimator_mode_from_string(mode); });
        }
        bind(app->add_option("--samples", samples, "Antithetic pairs N")->capture_default_str(),
             &ExperimentConfig::samples, &samples);
        bind(app->add_option("--episodes", episodes, "Cycles per trial T; comma list or repeated")
                 ->delimiter(',')
                 ->capture_default_str(),
             &ExperimentConfig::episodes, &episodes);
        auto* d = app->add_option("--discount", discount, "Geometric discount in [0,1), or none");
        setters.emplace_back(d, [this](ExperimentConfig& c) {
            c.discount.reset();
            if (discount != "none") {
                try {
                    std::size_t used = 0;
                    c.discount = std::stod(discount, &used);
                    if (used != discount.size()) throw std::invalid_argument(discount);
                } catch (const std::exception&) {
                    throw ConfigError("bad value for discount: '" + discount + "'");
                }
            }
        });
        bind(app->add_option("--seed", seed, "Master seed")->capture_default_str(), &ExperimentConfig::seed,
             &seed);
        bind(app->add_option("--threads", threads, "Worker threads")->capture_default_str(),
             &ExperimentConfig::threads, &threads);
        bind(app->add_option("--batch", batch, "Pairs per adaptive round (0 = default)")->capture_default_str(),
             &ExperimentConfig::batch, &batch);
        if (!compare) {
            bind(app->add_option("--table", table, "Stratum table file"), &ExperimentConfig::table, &table);
        }
        bind(app->add_option("--out", out, "Output directory"), &ExperimentConfig::out, &out);
        bind(app->add_option("--checkpoint", checkpoint, "Checkpoint file written at round barriers"),
             &ExperimentConfig::checkpoint, &checkpoint);
        bind(app->add_option("--checkpoint-interval", checkpoint_interval, "Rounds between checkpoints")
                 ->capture_default_str(),
             &ExperimentConfig::checkpoint_interval, &checkpoint_interval);
        bind(app->add_flag("--resume", resume, "Continue from --checkpoint if it exists"),
             &ExperimentConfig::resume, &resume);
        app->add_flag("--print-config", print_config, "Print the resolved config and exit");
    }

    ExperimentConfig resolve(bool compare) const {
        ExperimentConfig c;
        if (!config_path.empty()) c = ExperimentConfig::load(config_path);
        machine.apply(c.machine, c.screening);
        for (const auto& [opt, set] : setters) {
            if (opt->count()) set(c);
        }
        if (compare) {
            c.mode = EstimatorMode::compare;
            c.agents = {AgentSpec::parse(agent_a), AgentSpec::parse(agent_b)};
        } else if (c.mode == EstimatorMode::simple && !c.table.empty() && mode.empty()) {
            c.mode = EstimatorMode::stratified;
        }
        c.validate();
        return c;
    }
};

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

int run_eval(const ExperimentFlags& flags, bool compare, const std::string& cmd) {
    const ExperimentConfig config = flags.resolve(compare);
    std::cout << config.to_text();
    if (flags.print_config) return 0;
    std::cout << std::endl;
    const ExperimentResult r = run_experiment(config, cmd);
    for (const SummaryRow& row : r.summary) {
        std::cout << row.agent << "  T=" << row.episodes << "  mean " << fixed4(row.mean) << " ± "
                  << fixed4(row.ci) << "  (pairs " << row.pairs << ", discards " << row.discards << ")\n";
    }
    std::cout << "wrote " << (std::filesystem::path(config.out) / "summary.tsv").string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string cmd = command_line(argc, argv);
    CLI::App app{"Estimate agent intelligence scores over sampled BF environment programs"};
    app.require_subcommand(1);

    // strata build
    auto* strata = app.add_subcommand("strata", "Stratum tables");
    strata->require_subcommand(1);
    auto* build = strata->add_subcommand("build", "Pre-sample programs and write a stratum table");
    MachineFlags build_machine;
    build_machine.add(build);
    std::uint64_t build_presample = 1'000'000, build_seed = 1;
    int build_threads = 1;
    std::string build_out, build_scheme{StratumTable::kDefaultScheme};
    build->add_option("--presample", build_presample, "Pre-sample size N0 (>= 100000)")->capture_default_str();
    build->add_option("--seed", build_seed, "Pre-sample seed")->capture_default_str();
    build->add_option("--threads", build_threads, "Worker threads")->capture_default_str();
    build->add_option("--scheme", build_scheme, "Partition scheme")
        ->check(CLI::IsMember({std::string(StratumTable::kDefaultScheme),
                               std::string(StratumTable::kReactiveScheme)}))
        ->capture_default_str();
    build->add_option("--out", build_out, "Output table file")->required();

    // sample
    auto* sample = app.add_subcommand("sample", "Print screened programs");
    MachineFlags sample_machine;
    sample_machine.add(sample);
    std::uint64_t sample_n = 10, sample_seed = 1;
    std::string sample_table, sample_out;
    int sample_stratum = -1;
    sample->add_option("--n", sample_n, "Number of programs")->capture_default_str();
    sample->add_option("--seed", sample_seed, "Seed")->capture_default_str();
    sample->add_option("--table", sample_table, "Stratum table; programs are tagged with their stratum");
    sample->add_option("--stratum", sample_stratum, "Only draw from this stratum id (needs --table)");
    sample->add_option("--out", sample_out, "Output file (default: stdout)");

    // eval, compare
    auto* eval = app.add_subcommand("eval", "Estimate the score of one or more agents");
    ExperimentFlags eval_flags;
    eval_flags.add(eval, false);
    auto* compare = app.add_subcommand("compare", "Estimate B - A on common programs and seeds");
    ExperimentFlags compare_flags;
    compare_flags.add(compare, true);

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Grid search over agent parameters on one shared sample");
    MachineFlags sweep_machine;
    sweep_machine.add(sweep);
    std::string sweep_agent, sweep_table, sweep_out, sweep_discount;
    std::vector<std::string> sweep_grid;
    std::uint64_t sweep_samples = 1000, sweep_seed = 1, sweep_batch = 0;
    int sweep_episodes = 1000, sweep_threads = 1;
    sweep->add_option("--agent", sweep_agent, "Base agent spec")->required();
    sweep->add_option("--grid", sweep_grid, "Axis name=v1,v2,...; repeatable")->required();
    sweep->add_option("--samples", sweep_samples, "Antithetic pairs per grid point")->capture_default_str();
    sweep->add_option("--episodes", sweep_episodes, "Cycles per trial")->capture_default_str();
    sweep->add_option("--discount", sweep_discount, "Geometric discount in [0,1)");
    sweep->add_option("--seed", sweep_seed, "Master seed shared by all grid points")->capture_default_str();
    sweep->add_option("--threads", sweep_threads, "Worker threads")->capture_default_str();
    sweep->add_option("--batch", sweep_batch, "Pairs per adaptive round (0 = default)")->capture_default_str();
    sweep->add_option("--table", sweep_table, "Stratum table for stratified estimates")->check(CLI::ExistingFile);
    sweep->add_option("--out", sweep_out, "Sweep table file")->required();

    // dist
    auto* dist = app.add_subcommand("dist", "Empirical CDF of screened program lengths");
    MachineFlags dist_machine;
    dist_machine.add(dist);
    std::uint64_t dist_n = 200'000, dist_seed = 1;
    int dist_threads = 1;
    std::string dist_out;
    std::vector<std::string> dist_overlay;
    dist->add_option("--n", dist_n, "Programs to draw (>= 1000)")->capture_default_str();
    dist->add_option("--seed", dist_seed, "Seed")->capture_default_str();
    dist->add_option("--threads", dist_threads, "Worker threads")->capture_default_str();
    dist->add_option("--overlay", dist_overlay, "Trial logs whose program lengths are overlaid")
        ->check(CLI::ExistingFile);
    dist->add_option("--out", dist_out, "Output CDF table")->required();

    // plotdata
    auto* plot = app.add_subcommand("plotdata", "Merge summary files into agent x T series");
    std::vector<std::string> plot_in;
    std::string plot_out;
    plot->add_option("--in", plot_in, "summary.tsv files")->required()->check(CLI::ExistingFile);
    plot->add_option("--out", plot_out, "Output series file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (build->parsed()) {
            const auto [machine, screening] = build_machine.resolve();
            print_machine(std::cout, machine, screening);
            std::cout << "presample = " << build_presample << "\nseed = " << build_seed
                      << "\nscheme = " << build_scheme << "\nthreads = " << build_threads
                      << "\nout = " << build_out << "\n\n";
            if (build_presample < 100'000) throw ConfigError("presample must be at least 100000");
            const StratumTable t = build_stratum_table(build_presample, build_seed, machine, screening,
                                                       build_threads, build_scheme);
            save_stratum_table(t, build_out, cmd);
            for (const Stratum& s : t.strata) {
                std::cout << s.id << '\t' << s.predicate() << '\t' << s.mass << '\n';
            }
            std::cout << "wrote " << t.size() << " strata to " << build_out << '\n';
        } else if (sample->parsed()) {
            auto [machine, screening] = sample_machine.resolve();
            std::optional<StratumTable> table;
            if (!sample_table.empty()) {
                table = load_stratum_table(sample_table);
                machine = table->machine;
                screening = table->screening;
            }
            if (sample_stratum >= 0 && !table) throw ConfigError("--stratum needs --table");
            if (table && sample_stratum >= 0) table->at_id(sample_stratum);
            print_machine(std::cout, machine, screening);
            std::cout << "n = " << sample_n << "\nseed = " << sample_seed << "\n\n";
            std::ofstream file;
            if (!sample_out.empty()) {
                file.open(sample_out, std::ios::binary | std::ios::trunc);
                if (!file) throw IoError("cannot write " + sample_out);
            }
            std::ostream& os = sample_out.empty() ? std::cout : file;
            os << "# command: " << cmd << "\n# seed: " << sample_seed << '\n';
            os << "index\tstratum\tprogram\n";
            for (std::uint64_t i = 0; i < sample_n; ++i) {
                Rng rng(derive_seed({sample_seed, i, static_cast<std::uint64_t>(SeedRole::program)}));
                const Program p = sample_stratum >= 0 ? sample_from_stratum(sample_stratum, *table, rng)
                                                      : draw_screened(rng, machine, screening);
                os << i << '\t' << (table ? std::to_string(classify_stratum(p, *table)) : "-") << '\t'
                   << p.to_text() << '\n';
            }
            if (file.is_open()) {
                file.close();
                if (!file) throw IoError("error writing " + sample_out);
            }
        } else if (eval->parsed()) {
            return run_eval(eval_flags, false, cmd);
        } else if (compare->parsed()) {
            return run_eval(compare_flags, true, cmd);
        } else if (sweep->parsed()) {
            const auto [machine, screening] = sweep_machine.resolve();
            EvalConfig config;
            config.machine = machine;
            config.screening = screening;
            config.trial.episodes = sweep_episodes;
            if (!sweep_discount.empty() && sweep_discount != "none") {
                try {
                    config.trial.discount = std::stod(sweep_discount);
                } catch (const std::exception&) {
                    throw ConfigError("bad value for discount: '" + sweep_discount + "'");
                }
            }
            config.master_seed = sweep_seed;
            config.workers = sweep_threads;
            config.batch = sweep_batch;
            const AgentSpec base = AgentSpec::parse(sweep_agent);
            std::vector<SweepAxis> grid;
            for (const std::string& g : sweep_grid) grid.push_back(parse_sweep_axis(g));
            std::optional<StratumTable> table;
            if (!sweep_table.empty()) {
                table = load_stratum_table(sweep_table);
                if (table->machine != machine || table->screening != screening) {
                    throw ConfigError("stratum table was built for a different machine or screening setup");
                }
            }
            print_machine(std::cout, machine, screening);
            std::cout << "agent = " << base.to_string() << '\n';
            for (const std::string& g : sweep_grid) std::cout << "grid = " << g << '\n';
            std::cout << "samples = " << sweep_samples << "\nepisodes = " << sweep_episodes
                      << "\ndiscount = " << (config.trial.discount ? std::to_string(*config.trial.discount) : "none")
                      << "\nseed = " << sweep_seed << "\nthreads = " << sweep_threads
                      << "\ntable = " << sweep_table << "\nout = " << sweep_out << "\n\n";
            const SweepResult r = parameter_sweep(base, grid, sweep_samples, config, table ? &*table : nullptr);
            std::ofstream os(sweep_out, std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("cannot write " + sweep_out);
            r.write(os, cmd, sweep_seed);
            os.close();
            if (!os) throw IoError("error writing " + sweep_out);
            for (const SweepRow& row : r.rows) {
                std::cout << row.spec.to_string() << "  mean " << fixed4(row.estimate.mean) << " ± "
                          << fixed4(row.estimate.ci_halfwidth) << '\n';
            }
            std::cout << "best " << r.best_spec().to_string() << '\n';
        } else if (dist->parsed()) {
            const auto [machine, screening] = dist_machine.resolve();
            print_machine(std::cout, machine, screening);
            std::cout << "n = " << dist_n << "\nseed = " << dist_seed << "\nthreads = " << dist_threads
                      << "\nout = " << dist_out << "\n\n";
            std::vector<std::size_t> overlay;
            for (const std::string& f : dist_overlay) {
                std::ifstream is(f, std::ios::binary);
                if (!is) throw IoError("cannot read " + f);
                for (std::size_t l : lengths_from_trial_log(is)) overlay.push_back(l);
            }
            const CdfTable t = run_distribution_analysis(dist_n, dist_seed, machine, screening, dist_threads,
                                                         overlay);
            std::ofstream os(dist_out, std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("cannot write " + dist_out);
            t.write(os, cmd, dist_seed);
            os.close();
            if (!os) throw IoError("error writing " + dist_out);
            std::cout << "CDF(10) = " << t.cdf_at(10);
            if (!overlay.empty()) std::cout << "  overlay CDF(10) = " << t.overlay_cdf_at(10);
            std::cout << "\nwrote " << dist_out << '\n';
        } else if (plot->parsed()) {
            std::cout << "in = ";
            for (std::size_t i = 0; i < plot_in.size(); ++i) std::cout << (i ? "," : "") << plot_in[i];
            std::cout << "\nout = " << plot_out << "\n\n";
            std::vector<SummaryRow> rows;
            std::vector<std::uint64_t> seeds;
            for (const std::string& f : plot_in) {
                std::ifstream is(f, std::ios::binary);
                if (!is) throw IoError("cannot read " + f);
                SummaryFile s = read_summary(is);
                seeds.push_back(s.seed);
                rows.insert(rows.end(), s.rows.begin(), s.rows.end());
            }
            const std::vector<SeriesPoint> points = plot_series(rows);
            std::ofstream os(plot_out, std::ios::binary | std::ios::trunc);
            if (!os) throw IoError("cannot write " + plot_out);
            write_plot_data(os, points, cmd, seeds);
            os.close();
            if (!os) throw IoError("error writing " + plot_out);
            std::cout << "wrote " << points.size() << " points to " << plot_out << '\n';
        }
    } catch (const ConfigError& e) {
        std::cerr << "aiq: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const StratumError& e) {
        std::cerr << "aiq: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "aiq: config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const IoError& e) {
        std::cerr << "aiq: io error: " << e.what() << '\n';
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "aiq: error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
