#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "aiq/harness.hpp"

using namespace aiq;
namespace fs = std::filesystem;

namespace {

fs::path work_dir(const std::string& name) {
    const fs::path p = fs::path(WORK_DIR) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

// Every file of an output directory except wall-clock timings and checkpoints.
std::map<std::string, std::string> outputs(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name == "timing.tsv" || name.ends_with(".json")) continue;
        files[name] = slurp(entry.path());
    }
    return files;
}

ExperimentConfig base_config(const fs::path& out) {
    ExperimentConfig c;
    c.agents = {AgentSpec::parse("freq:epsilon=0.1"), AgentSpec::parse("q:alpha=0.5,gamma=0.85,lambda=0.9,epsilon=0.01")};
    c.samples = 120;
    c.episodes = {50, 100};
    c.seed = 17;
    c.batch = 20;
    c.out = out.string();
    return c;
}

const fs::path& small_table_file() {
    static const fs::path p = [] {
        const fs::path dir = fs::path(WORK_DIR) / "tables";
        fs::create_directories(dir);
        const fs::path f = dir / "small.tsv";
        save_stratum_table(build_stratum_table(100'000, 3, {}, {}, 1), f, "test");
        return f;
    }();
    return p;
}

}  // namespace

TEST_CASE("config text round trip") {
    ExperimentConfig c;
    c.agents = {AgentSpec::parse("random"), AgentSpec::parse("external:cmd=./agent --x 1,timeout=2.5")};
    c.machine.num_symbols = 7;
    c.machine.step_limit = 500;
    c.screening.dry_run_cycles = 30;
    c.mode = EstimatorMode::compare;
    c.samples = 777;
    c.episodes = {100, 1000, 10'000};
    c.discount = 0.99;
    c.seed = 123456789012345ULL;
    c.threads = 3;
    c.checkpoint = "ck.json";
    c.checkpoint_interval = 4;
    c.resume = true;
    CHECK(ExperimentConfig::parse(c.to_text()) == c);
    CHECK(ExperimentConfig::parse(ExperimentConfig{}.to_text()) == ExperimentConfig{});

    const ExperimentConfig p = ExperimentConfig::parse(
        "# comment\nagent = random\nagent = freq:epsilon=0.2\n  episodes = 10, 20\nsamples=50\ndiscount = none\n");
    CHECK(p.agents.size() == 2);
    CHECK(p.episodes == std::vector<int>{10, 20});
    CHECK(p.samples == 50);
    CHECK_FALSE(p.discount.has_value());
}

TEST_CASE("defaults mirror the main experimental setup") {
    const ExperimentConfig c;
    CHECK(c.machine.num_symbols == 5);
    CHECK(c.machine.obs_cells == 1);
    CHECK(c.machine.step_limit == 1000);
    CHECK(c.episodes == std::vector<int>{1000});
    CHECK(c.samples == 10'000);
}

TEST_CASE("config validation") {
    const auto invalid = [](const std::string& text) {
        CHECK_THROWS_AS(ExperimentConfig::parse(text).validate(), ConfigError);
    };
    invalid("agent = random\nepisodes = 0\n");
    invalid("agent = random\nsamples = 1\n");
    invalid("agent = random\ndiscount = 1\n");
    invalid("agent = random\nthreads = 0\n");
    invalid("episodes = 10\n");
    invalid("agent = random\nmode = compare\n");
    invalid("agent = random\nmode = stratified\n");
    invalid("agent = random\nmode = stratified\ntable = /nonexistent/table.tsv\n");
    invalid("agent = hlq\n");
    invalid("agent = random\nnum_symbols = 1\n");
    CHECK_THROWS_AS(ExperimentConfig::parse("agent = random\nbogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("agent = random\nsamples = many\n"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::parse("agent = random\nepisodes =\n"), ConfigError);
    CHECK_NOTHROW(ExperimentConfig::parse("agent = random\n").validate());
}

TEST_CASE("Random agent summary is exactly zero") {
    const fs::path out = work_dir("random");
    ExperimentConfig c;
    c.agents = {AgentSpec::parse("random")};
    c.samples = 100;
    c.episodes = {100};
    c.out = out.string();
    const ExperimentResult r = run_experiment(c, "aiq eval --agent random");
    REQUIRE(r.complete);
    REQUIRE(r.summary.size() == 1);
    CHECK(r.summary[0].mean == 0.0);
    CHECK(r.summary[0].ci == 0.0);
    CHECK(r.summary[0].pairs == 100);

    std::ifstream is(out / "summary.tsv");
    const SummaryFile f = read_summary(is);
    CHECK(f.command == "aiq eval --agent random");
    CHECK(f.seed == 1);
    CHECK(f.rows == r.summary);

    for (const fs::path& file : r.files) {
        const std::string text = slurp(file);
        CHECK(text.starts_with("# command: aiq eval --agent random\n# seed: 1\n"));
    }
}

TEST_CASE("repeat runs and worker counts give identical files") {
    const fs::path a = work_dir("repeat_a"), b = work_dir("repeat_b"), c8 = work_dir("repeat_c");
    ExperimentConfig c = base_config(a);
    run_experiment(c, "cmd");
    c.out = b.string();
    run_experiment(c, "cmd");
    c.out = c8.string();
    c.threads = 8;
    run_experiment(c, "cmd");
    const auto files = outputs(a);
    CHECK(files.size() == 5);  // summary plus four trial logs
    CHECK(files == outputs(b));
    CHECK(files == outputs(c8));
}

TEST_CASE("compare mode writes both agents and the difference") {
    const fs::path out = work_dir("compare");
    ExperimentConfig c = base_config(out);
    c.mode = EstimatorMode::compare;
    c.episodes = {100};
    const ExperimentResult r = run_experiment(c, "cmd");
    REQUIRE(r.summary.size() == 3);
    CHECK(r.summary[2].mean == doctest::Approx(r.summary[1].mean - r.summary[0].mean).epsilon(1e-12));
    CHECK(r.summary[2].agent.find(" - ") != std::string::npos);
    CHECK(fs::exists(out / "trials_compare_T100.tsv"));
}

TEST_CASE("stratified mode writes per-stratum tables") {
    const fs::path out = work_dir("stratified");
    ExperimentConfig c = base_config(out);
    c.mode = EstimatorMode::stratified;
    c.table = small_table_file().string();
    const StratumTable t = load_stratum_table(c.table);
    c.samples = 10 * t.size();
    c.episodes = {50};
    c.agents.resize(1);
    const ExperimentResult r = run_experiment(c, "cmd");
    REQUIRE(r.complete);
    const std::string strata = slurp(out / "strata_a0_T50.tsv");
    CHECK(strata.find("id\tpredicate\tmass\tn\tmean\tsd\n") != std::string::npos);

    ExperimentConfig mismatch = c;
    mismatch.machine.step_limit = 999;
    CHECK_THROWS_AS(run_experiment(mismatch, "cmd"), ConfigError);
}

TEST_CASE("kill and resume at any barrier reproduces the outputs") {
    const fs::path ref = work_dir("resume_ref");
    ExperimentConfig c = base_config(ref);
    run_experiment(c, "cmd");
    const auto expected = outputs(ref);

    for (std::uint64_t stop : {1, 2, 5, 6, 9, 13}) {
        const fs::path out = work_dir("resume_" + std::to_string(stop));
        ExperimentConfig k = base_config(out);
        k.checkpoint = (out / "ck.json").string();
        RunControl ctl;
        ctl.stop_after_rounds = stop;
        const ExperimentResult first = run_experiment(k, "cmd", ctl);
        CHECK_FALSE(first.complete);
        CHECK_FALSE(fs::exists(out / "summary.tsv"));

        k.resume = true;
        k.threads = 4;  // the worker count is free to change
        const ExperimentResult second = run_experiment(k, "cmd");
        CHECK(second.complete);
        CHECK(outputs(out) == expected);
    }

    SUBCASE("a checkpoint from another experiment is refused") {
        const fs::path out = work_dir("resume_other");
        ExperimentConfig k = base_config(out);
        k.checkpoint = (out / "ck.json").string();
        RunControl ctl;
        ctl.stop_after_rounds = 2;
        run_experiment(k, "cmd", ctl);
        k.resume = true;
        k.seed = 18;
        CHECK_THROWS_AS(run_experiment(k, "cmd"), ConfigError);
    }
}

TEST_CASE("unwritable output is an IoError") {
    const fs::path out = work_dir("blocked");
    std::ofstream(out / "file") << "x";
    ExperimentConfig c;
    c.agents = {AgentSpec::parse("random")};
    c.samples = 10;
    c.episodes = {10};
    c.out = (out / "file" / "sub").string();
    CHECK_THROWS_AS(run_experiment(c, "cmd"), IoError);
    CHECK_THROWS_AS(load_stratum_table(out / "missing.tsv"), IoError);
}

TEST_CASE("program length distribution") {
    const CdfTable t = run_distribution_analysis(50'000, 1, {}, {}, 4);
    CHECK(t.programs == 50'000);
    double prev = 0;
    std::uint64_t total = 0;
    for (const CdfRow& r : t.rows) {
        CHECK(r.cdf >= prev);
        prev = r.cdf;
        total += r.count;
    }
    CHECK(total == 50'000);
    CHECK(t.rows.back().cdf == 1.0);
    CHECK(t.cdf_at(100'000) == 1.0);
    const double at10 = t.cdf_at(10);
    MESSAGE("CDF(10) = " << at10);
    CHECK(at10 >= 0.25);
    CHECK(at10 <= 0.55);

    // Raw lengths are geometric, P(raw > L) = 0.9^(L+1), and simplifying only
    // shortens. Conditioning on passing the screen can inflate the tail by at
    // most 1 / P(pass), so C = 0.9 / P(pass) bounds 1 - CDF(L) by C 0.9^L.
    Rng rng(8);
    const MachineConfig m;
    int pass = 0;
    const int raw = 200'000;
    for (int i = 0; i < raw; ++i) pass += std::holds_alternative<Program>(screen(sample_program(rng, m), rng, m));
    const double p = pass / double(raw);
    const double c = 0.9 / p;
    MESSAGE("screen pass rate " << p);
    for (std::size_t len : {20u, 30u, 40u}) {
        const double tail = 1.0 - t.cdf_at(len);
        const double bound = c * std::pow(0.9, double(len));
        const double noise = 3 * std::sqrt(bound * (1 - bound) / 50'000.0);
        CHECK(tail <= bound + noise);
    }

    SUBCASE("determinism and worker independence") {
        const CdfTable a = run_distribution_analysis(2000, 5, {}, {}, 1);
        const CdfTable b = run_distribution_analysis(2000, 5, {}, {}, 3);
        std::ostringstream sa, sb;
        a.write(sa, "cmd", 5);
        b.write(sb, "cmd", 5);
        CHECK(sa.str() == sb.str());
        CHECK(sa.str().starts_with("# command: cmd\n# seed: 5\n"));
    }
    SUBCASE("overlay") {
        const CdfTable o = run_distribution_analysis(1000, 5, {}, {}, 1, {2, 2, 12, 30});
        CHECK(o.overlay_programs == 4);
        CHECK(o.overlay_cdf_at(2) == 0.5);
        CHECK(o.overlay_cdf_at(11) == 0.5);
        CHECK(o.overlay_cdf_at(12) == 0.75);
        CHECK(o.overlay_cdf_at(30) == 1.0);
    }
    CHECK_THROWS(run_distribution_analysis(999, 1));
}

TEST_CASE("lengths from trial logs") {
    std::istringstream plain(
        "# command: x\n# seed: 1\nsample_idx\tstratum\tprogram\tscore0\tscore1\tstatus\n"
        "0\t0\t,.\t1\t1\tok\n1\t0\t+[]\t0\t0\tstep_limit\n2\t0\t,>>.\t0\t0\tok\n");
    CHECK(lengths_from_trial_log(plain) == std::vector<std::size_t>{2, 4});
    std::istringstream paired(
        "# command: x\n# seed: 1\nsample_idx\tstratum\tagent\tprogram\tscore0\tscore1\tstatus\n"
        "0\t0\ta\t,.\t1\t1\tok\n0\t0\tb\t,.\t1\t1\tok\n1\t0\ta\t,%.\t1\t1\tok\n1\t0\tb\t,%.\t1\t1\tagent_timeout\n");
    CHECK(lengths_from_trial_log(paired) == std::vector<std::size_t>{2});
}

TEST_CASE("sweep grids") {
    CHECK(parse_sweep_axis("epsilon=0.01,0.05") == SweepAxis{"epsilon", {"0.01", "0.05"}});
    CHECK_THROWS_AS(parse_sweep_axis("epsilon"), ConfigError);
    const auto specs = expand_grid(AgentSpec::parse("q"), {parse_sweep_axis("alpha=0.1,0.5"), parse_sweep_axis("lambda=0,0.9,1")});
    REQUIRE(specs.size() == 6);
    CHECK(specs[0].alpha == 0.1);
    CHECK(specs[0].lambda == 0.0);
    CHECK(specs[1].lambda == 0.9);
    CHECK(specs[3].alpha == 0.5);
    CHECK_THROWS_AS(expand_grid(AgentSpec::parse("q"), {parse_sweep_axis("alpha=2")}), ConfigError);
    CHECK_THROWS_AS(expand_grid(AgentSpec::parse("freq"), {parse_sweep_axis("flavour=1")}), ConfigError);
}

TEST_CASE("parameter sweep") {
    EvalConfig cfg;
    cfg.trial.episodes = 1000;
    cfg.master_seed = 2;

    SUBCASE("one point") {
        const SweepResult r = parameter_sweep(AgentSpec::parse("freq"), {parse_sweep_axis("epsilon=0.1")}, 50, cfg);
        REQUIRE(r.rows.size() == 1);
        CHECK(r.best == 0);
        CHECK(r.best_spec().epsilon == 0.1);
    }
    SUBCASE("epsilon grid: heavy exploration does not win") {
        const SweepResult r = parameter_sweep(AgentSpec::parse("freq"),
                                              {parse_sweep_axis("epsilon=0.01,0.05,0.1,0.25")}, 1000, cfg);
        REQUIRE(r.rows.size() == 4);
        for (const SweepRow& row : r.rows) MESSAGE(row.spec.to_string() << ": " << row.estimate.mean);
        CHECK(r.best_spec().epsilon < 0.25);
        for (const SweepRow& row : r.rows) CHECK(row.estimate.mean <= r.rows[r.best].estimate.mean);

        std::ostringstream os;
        r.write(os, "cmd", 2);
        const std::string text = os.str();
        CHECK(text.starts_with("# command: cmd\n# seed: 2\n"));
        CHECK(std::count(text.begin(), text.end(), '\n') == 2 + 1 + 4);
    }
    SUBCASE("exploration cost on a deterministic bandit") {
        // On `,.` greedy play earns +100 and an exploratory action earns the
        // grid mean 0, so a long trial scores close to 100 (1 - epsilon).
        const MachineConfig m;
        for (double eps : {0.01, 0.05, 0.1, 0.25}) {
            FreqAgent f(eps);
            const PairScore s = run_pair(f, Program(false, ",."), {10'000, {}}, 3, m);
            CHECK(s.score0 == doctest::Approx(100 * (1 - eps)).epsilon(0.02));
            CHECK(s.score1 == doctest::Approx(100 * (1 - eps)).epsilon(0.02));
        }
    }
}

TEST_CASE("plot series") {
    std::vector<SummaryRow> rows = {
        {"q", "simple", 1000, 10, 30, 2, 1, 0},
        {"freq", "simple", 1000, 10, 20, 1, 0.5, 0},
        {"freq", "simple", 100, 10, 10, 1, 0.5, 0},
        {"freq", "simple", 100, 10, 12, 3, 1.5, 0},
    };
    const auto pts = plot_series(rows);
    REQUIRE(pts.size() == 3);
    CHECK(pts[0].agent == "freq");
    CHECK(pts[0].episodes == 100);
    CHECK(pts[0].mean == 12);
    CHECK(pts[0].lower == 9);
    CHECK(pts[0].upper == 15);
    CHECK(pts[1].episodes == 1000);
    CHECK(pts[2].agent == "q");
    std::ostringstream os;
    write_plot_data(os, pts, "cmd", {1, 2});
    CHECK(os.str().starts_with("# command: cmd\n# seed: 1 2\n"));
}
