#include "flsim/config.hpp"
#include "flsim/harness.hpp"
#include "flsim/metrics.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace flsim;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitInternal = 3;

struct Options {
    std::string config;
    std::string out = ".";
    std::optional<std::uint32_t> seeds;
    unsigned threads = 0;
    bool quiet = false;
    std::string csv;
};

fs::path out_dir(const Options& o) {
    fs::path dir(o.out);
    fs::create_directories(dir);
    return dir;
}

int cmd_run(const Options& o) {
    const auto cfg = load_config(o.config);
    if (cfg.sweep || cfg.tcp_grid) throw ConfigError("/sweep", "config declares a sweep or grid; use that subcommand");
    const auto row = run_single(cfg);
    const auto path = out_dir(o) / "run.csv";
    emit_csv({row}, path);
    if (!o.quiet) std::cout << summarize(row.result) << "\nwrote " << path.string() << "\n";
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto cfg = load_config(o.config);
    if (!cfg.sweep) throw ConfigError("/sweep", "config has no sweep axis");
    const auto outcome = run_sweep(cfg, o.seeds, o.threads);
    const auto dir = out_dir(o);
    emit_csv(outcome.rows, dir / "sweep.csv");
    emit_csv(outcome.all_runs, dir / "sweep_all_seeds.csv");
    if (!o.quiet) std::cout << outcome.table << "wrote " << (dir / "sweep.csv").string() << "\n";
    return 0;
}

int cmd_grid(const Options& o) {
    const auto cfg = load_config(o.config);
    if (!cfg.tcp_grid) throw ConfigError("/sweep/tcp_grid", "config has no tcp grid");
    const auto outcome = run_grid(cfg, o.threads);
    const auto dir = out_dir(o);
    emit_csv(outcome.rows, dir / "grid.csv");
    std::ofstream m(dir / "grid_matrix.csv", std::ios::binary | std::ios::trunc);
    if (!m) throw IoError("cannot write " + (dir / "grid_matrix.csv").string());
    m << outcome.matrix_csv;
    if (!o.quiet) std::cout << outcome.matrix_csv << "wrote " << (dir / "grid.csv").string() << "\n";
    return 0;
}

int cmd_recommend(const Options& o) {
    std::vector<RunRow> rows;
    try {
        rows = read_runs_csv(o.csv);
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    std::cout << recommend(rows);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated learning over impaired networks: discrete-event simulator"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "experiment configuration (JSON)")->required();
        sub->add_option("--out", o.out, "output directory");
        sub->add_option("--threads", o.threads, "parallel runs (0 = all cores)");
        sub->add_flag("--quiet", o.quiet, "print nothing on success");
    };
    auto* run = app.add_subcommand("run", "execute one experiment");
    add_common(run);
    auto* sweep = app.add_subcommand("sweep", "sweep one impairment axis");
    add_common(sweep);
    sweep->add_option("--seeds", o.seeds, "seeds per value (median reported)")->check(CLI::PositiveNumber);
    auto* grid = app.add_subcommand("grid", "TCP parameter x latency grid");
    add_common(grid);
    auto* rec = app.add_subcommand("recommend", "remediation report for a results CSV");
    rec->add_option("csv", o.csv, "runs CSV written by run/sweep/grid")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*run) return cmd_run(o);
        if (*sweep) return cmd_sweep(o);
        if (*grid) return cmd_grid(o);
        return cmd_recommend(o);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CsvParseError& e) {
        std::cerr << "csv error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
