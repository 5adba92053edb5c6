#pragma once

#include "flsim/config.hpp"
#include "flsim/metrics.hpp"

#include <optional>
#include <string>
#include <vector>

namespace flsim {

struct RunSpec {
    std::string run_id;
    std::string axis;
    double axis_value = 0.0;
    std::string tcp_param_overrides;
    ExperimentConfig cfg;
};

/// Runs every spec, up to `threads` at a time, and returns rows sorted by
/// run_id. threads == 0 picks the hardware concurrency.
std::vector<RunRow> execute_runs(const std::vector<RunSpec>& specs, unsigned threads = 0);

RunRow run_single(const ExperimentConfig& cfg);

/// Applies one sweep coordinate to a single-run config. client_failure_pct
/// appends a kill of that fraction right after round 1.
ExperimentConfig apply_axis(ExperimentConfig cfg, SweepAxis axis, double value);

/// Orders runs for median selection: completed runs by total time, then
/// failed runs.
bool run_less(const RunResult& a, const RunResult& b);

struct SweepOutcome {
    std::vector<RunRow> rows;      // the median run per value, in sweep order
    std::vector<RunRow> all_runs;  // every seed
    std::string table;             // observed vs published classes
};

SweepOutcome run_sweep(const ExperimentConfig& cfg, std::optional<std::uint32_t> seeds = std::nullopt,
                       unsigned threads = 0);

struct GridOutcome {
    std::vector<RunRow> rows;
    std::string matrix_csv;
};

GridOutcome run_grid(const ExperimentConfig& cfg, unsigned threads = 0);

/// Remediation report for the failure kinds present in `rows`.
std::string recommend(const std::vector<RunRow>& rows);

}  // namespace flsim
