// w2sg: run loss-comparison sweeps, the theory suite, and extract plot tables.

#include <iostream>

#include <CLI11.hpp>

#include <w2sg/harness.hpp>

namespace {

struct Overrides {
    std::optional<std::uint64_t> seed_offset;
    std::optional<std::string> output_dir;
    std::optional<double> cell_time_limit;
};

w2sg::ExperimentConfig load(const std::string& file, const Overrides& o) {
    w2sg::ExperimentConfig c = w2sg::load_config(file);
    if (o.output_dir) c.output_dir = *o.output_dir;
    if (o.cell_time_limit) c.cell_time_limit_seconds = *o.cell_time_limit;
    if (o.seed_offset) w2sg::apply_seed_offset(c, *o.seed_offset);
    c.validate();
    return c;
}

void add_overrides(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--seed-offset", o.seed_offset, "Shift every replication seed");
    cmd->add_option("--output-dir", o.output_dir, "Directory for report.json and report.csv");
    cmd->add_option("--cell-time-limit", o.cell_time_limit, "Wall-clock seconds per fit (0 = unlimited)")
        ->check(CLI::NonNegativeNumber);
}

int finish(const w2sg::RunReport& rep, const std::string& dir, bool strict) {
    w2sg::write_report(rep, dir);
    int code = rep.exit_code;
    const long failures = rep.invariants.value("optimization_failures", 0L);
    if (code == w2sg::kExitOk && strict && failures > 0) code = w2sg::kExitOptimizationFailure;
    std::cout << rep.kind << ": " << rep.records.size() << " records, wrote " << dir << "/report.json and " << dir
              << "/report.csv (" << rep.total_wall_time_s << " s)\n";
    if (failures > 0) std::cerr << "warning: " << failures << " fits failed\n";
    if (rep.exit_code == w2sg::kExitTheoryViolation) std::cerr << "theory violation: see report.json invariants\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weak-to-strong generalization lab"};
    app.require_subcommand(1);

    std::string config_file, report_file, which;
    bool strict = false;
    Overrides run_o, theory_o;

    CLI::App* run = app.add_subcommand("run", "Run a loss-comparison sweep");
    run->add_option("config", config_file, "Experiment config (JSON)")->required();
    run->add_flag("--strict", strict, "Exit 4 when any fit fails");
    add_overrides(run, run_o);

    CLI::App* theory = app.add_subcommand("theory", "Run the identity, bound and gap-curve suite");
    theory->add_option("config", config_file, "Experiment config (JSON)")->required();
    add_overrides(theory, theory_o);

    CLI::App* plot = app.add_subcommand("plotdata", "Extract a plot table from a report");
    plot->add_option("report", report_file, "report.json")->required();
    plot->add_option("--which", which, "loss-bars, noise-curves or gap-curve")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : w2sg::kExitConfigError;
    }

    try {
        if (*run) {
            const auto c = load(config_file, run_o);
            return finish(w2sg::run(c), c.output_dir, strict);
        }
        if (*theory) {
            const auto c = load(config_file, theory_o);
            return finish(w2sg::run_theory_suite(c), c.output_dir, false);
        }
        const w2sg::PlotKind kind = w2sg::parse_plot_kind(which);
        std::ifstream in(report_file);
        if (!in) throw w2sg::ConfigError("cannot open report '" + report_file + "'");
        w2sg::json report;
        try {
            report = w2sg::json::parse(in);
        } catch (const w2sg::json::exception& e) {
            throw w2sg::ConfigError("report '" + report_file + "' is not valid JSON: " + e.what());
        }
        std::string table;
        try {
            table = w2sg::emit_plot_data(report, kind);
        } catch (const w2sg::json::exception& e) {
            throw w2sg::ConfigError("report '" + report_file + "' is malformed: " + e.what());
        }
        const auto out =
            std::filesystem::path(report_file).parent_path() / ("plot_" + std::string(w2sg::to_string(kind)) + ".csv");
        w2sg::write_text(out, table);
        std::cout << "wrote " << out.string() << "\n";
        return w2sg::kExitOk;
    } catch (const w2sg::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return w2sg::kExitConfigError;
    } catch (const w2sg::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return w2sg::kExitOptimizationFailure;
    }
}
