#pragma once

#include "flsim/fl_types.hpp"
#include "flsim/tcp.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace flsim {

struct RunResult {
    std::string config_digest;
    std::uint64_t master_seed = 0;
    SimTime total_time = 0.0;
    std::uint32_t rounds_completed = 0;
    double final_accuracy = 0.0;
    FailureKind failure_kind = FailureKind::None;
    std::vector<RoundRecord> rounds;
    ConnCounters transport;
    std::uint64_t bytes_sent = 0;
    std::uint64_t bytes_delivered = 0;
    std::uint32_t connect_failures = 0;

    friend bool operator==(const RunResult&, const RunResult&) = default;
};

enum class ThresholdClass : std::uint8_t { Acceptable, Tolerable, Failure };
std::string_view to_string(ThresholdClass c) noexcept;
std::optional<ThresholdClass> parse_threshold_class(std::string_view text) noexcept;

enum class SweepAxis : std::uint8_t { DelayS, LossPct, ClientFailurePct };
std::string_view to_string(SweepAxis axis) noexcept;

class UnknownAxis : public std::invalid_argument {
public:
    explicit UnknownAxis(std::string_view name);
};

/// Throws UnknownAxis.
SweepAxis parse_axis(std::string_view name);

struct Classification {
    ThresholdClass cls = ThresholdClass::Acceptable;
    /// The value fell between two published bands and took the lower one.
    bool interpolated = false;

    friend bool operator==(const Classification&, const Classification&) = default;
};

/// Published fault-tolerance bands per axis. Throws std::domain_error for
/// values outside the axis domain (negative, NaN, percentages above 100).
Classification classify(SweepAxis axis, double value);
Classification classify(std::string_view axis, double value);

/// One CSV row: a run plus the sweep coordinates that produced it.
struct RunRow {
    std::string run_id;
    std::string axis;  // empty for single runs
    double axis_value = 0.0;
    std::string tcp_param_overrides;  // "name=value;name=value"
    RunResult result;
    std::string threshold_class;  // empty when the axis has no bands
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CsvParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::string_view kRunCsvHeader =
    "run_id,master_seed,axis,axis_value,tcp_param_overrides,total_time_s,rounds_completed,final_accuracy,"
    "failure_kind,syn_retransmits,data_retransmits,keepalive_probes_sent,buffer_drops,bytes_sent,"
    "bytes_delivered,threshold_class";

inline constexpr std::string_view kRoundCsvHeader =
    "run_id,round_index,status,started_at_s,ended_at_s,participants,updates_received,excluded,aborted,"
    "eval_accuracy,buffer_stalled,uplink_bytes,downlink_bytes";

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(std::string_view text);

void write_runs_csv(std::ostream& out, const std::vector<RunRow>& rows);
void write_rounds_csv(std::ostream& out, const std::vector<RunRow>& rows);

/// Writes `path` and the per-round companion `<stem>_rounds.csv` next to it.
/// Throws std::invalid_argument on an empty list and IoError on I/O failure.
void emit_csv(const std::vector<RunRow>& rows, const std::filesystem::path& path);
std::filesystem::path rounds_companion_path(const std::filesystem::path& runs_csv);

/// Parsed run-level CSV row. Round records and abort counts are not part of
/// the run-level file and come back empty.
std::vector<RunRow> parse_runs_csv(std::istream& in);
std::vector<RunRow> read_runs_csv(const std::filesystem::path& path);

/// Human-readable one-line summary.
std::string summarize(const RunResult& r);

}  // namespace flsim
