#include "flsim/metrics.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace flsim {

std::string_view to_string(ThresholdClass c) noexcept {
    switch (c) {
        case ThresholdClass::Acceptable: return "Acceptable";
        case ThresholdClass::Tolerable: return "Tolerable";
        case ThresholdClass::Failure: return "Failure";
    }
    return "?";
}

std::optional<ThresholdClass> parse_threshold_class(std::string_view text) noexcept {
    for (auto c : {ThresholdClass::Acceptable, ThresholdClass::Tolerable, ThresholdClass::Failure})
        if (to_string(c) == text) return c;
    return std::nullopt;
}

std::string_view to_string(SweepAxis axis) noexcept {
    switch (axis) {
        case SweepAxis::DelayS: return "delay_s";
        case SweepAxis::LossPct: return "loss_pct";
        case SweepAxis::ClientFailurePct: return "client_failure_pct";
    }
    return "?";
}

UnknownAxis::UnknownAxis(std::string_view name)
    : std::invalid_argument("unknown sweep axis '" + std::string(name) +
                            "' (expected delay_s, loss_pct or client_failure_pct)") {}

SweepAxis parse_axis(std::string_view name) {
    for (auto a : {SweepAxis::DelayS, SweepAxis::LossPct, SweepAxis::ClientFailurePct})
        if (to_string(a) == name) return a;
    throw UnknownAxis(name);
}

Classification classify(SweepAxis axis, double v) {
    using TC = ThresholdClass;
    if (std::isnan(v) || v < 0.0) throw std::domain_error("classify: value must be >= 0");
    switch (axis) {
        case SweepAxis::DelayS:
            if (v < 0.3) return {TC::Acceptable, false};
            if (v < 5.0) return {TC::Acceptable, true};
            if (v == 5.0) return {TC::Tolerable, false};
            return {TC::Failure, false};
        case SweepAxis::LossPct:
            if (v > 100.0) throw std::domain_error("classify: loss_pct must be <= 100");
            if (v < 10.0) return {TC::Acceptable, false};
            if (v < 30.0) return {TC::Acceptable, true};
            if (v <= 40.0) return {TC::Tolerable, false};
            if (v <= 50.0) return {TC::Tolerable, true};
            return {TC::Failure, false};
        case SweepAxis::ClientFailurePct:
            if (v > 100.0) throw std::domain_error("classify: client_failure_pct must be <= 100");
            if (v < 50.0) return {TC::Acceptable, false};
            if (v <= 70.0) return {TC::Tolerable, false};
            if (v <= 90.0) return {TC::Tolerable, true};
            return {TC::Failure, false};
    }
    throw UnknownAxis("?");
}

Classification classify(std::string_view axis, double value) { return classify(parse_axis(axis), value); }

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw CsvParseError("not a number: '" + std::string(text) + "'");
    return v;
}

namespace {

template <typename T>
T parse_uint(std::string_view text) {
    T v{};
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc{} || res.ptr != text.data() + text.size())
        throw CsvParseError("not an unsigned integer: '" + std::string(text) + "'");
    return v;
}

std::string join_ids(const std::vector<std::uint32_t>& ids) {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (i) out += ';';
        out += std::to_string(ids[i]);
    }
    return out;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(line.substr(start));
            return out;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
}

void check_cell(std::string_view s) {
    if (s.find_first_of(",\n\r\"") != std::string_view::npos)
        throw std::invalid_argument("CSV cell may not contain commas, quotes or newlines: " + std::string(s));
}

}  // namespace

void write_runs_csv(std::ostream& out, const std::vector<RunRow>& rows) {
    out << kRunCsvHeader << '\n';
    for (const auto& row : rows) {
        const auto& r = row.result;
        check_cell(row.run_id);
        check_cell(row.axis);
        check_cell(row.tcp_param_overrides);
        out << row.run_id << ',' << r.master_seed << ',' << row.axis << ',' << format_double(row.axis_value) << ','
            << row.tcp_param_overrides << ',' << format_double(r.total_time) << ',' << r.rounds_completed << ','
            << format_double(r.final_accuracy) << ',' << to_string(r.failure_kind) << ','
            << r.transport.syn_retransmits << ',' << r.transport.data_retransmits << ','
            << r.transport.keepalive_probes_sent << ',' << r.transport.segments_dropped_buffer_full << ','
            << r.bytes_sent << ',' << r.bytes_delivered << ',' << row.threshold_class << '\n';
    }
}

void write_rounds_csv(std::ostream& out, const std::vector<RunRow>& rows) {
    out << kRoundCsvHeader << '\n';
    for (const auto& row : rows) {
        for (const auto& rec : row.result.rounds) {
            out << row.run_id << ',' << rec.round_index << ',' << to_string(rec.status) << ','
                << format_double(rec.started_at) << ',' << format_double(rec.ended_at) << ','
                << join_ids(rec.participants) << ',' << rec.updates_received << ','
                << join_ids(rec.excluded_by_deadline) << ',' << join_ids(rec.aborted) << ','
                << format_double(rec.eval_accuracy) << ',' << (rec.buffer_stalled ? 1 : 0) << ','
                << rec.uplink_bytes << ',' << rec.downlink_bytes << '\n';
        }
    }
}

std::filesystem::path rounds_companion_path(const std::filesystem::path& runs_csv) {
    auto p = runs_csv;
    p.replace_filename(runs_csv.stem().string() + "_rounds.csv");
    return p;
}

void emit_csv(const std::vector<RunRow>& rows, const std::filesystem::path& path) {
    if (rows.empty()) throw std::invalid_argument("emit_csv needs at least one run");
    auto write = [](const std::filesystem::path& p, auto&& body) {
        std::ofstream f(p, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + p.string() + " for writing");
        body(f);
        f.flush();
        if (!f) throw IoError("write failed for " + p.string());
    };
    write(path, [&](std::ostream& o) { write_runs_csv(o, rows); });
    write(rounds_companion_path(path), [&](std::ostream& o) { write_rounds_csv(o, rows); });
}

std::vector<RunRow> parse_runs_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw CsvParseError("empty CSV");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kRunCsvHeader) throw CsvParseError("unexpected CSV header: " + line);

    std::vector<RunRow> rows;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cells = split(line, ',');
        if (cells.size() != 16)
            throw CsvParseError("line " + std::to_string(lineno) + ": expected 16 columns, got " +
                                std::to_string(cells.size()));
        try {
            RunRow row;
            auto& r = row.result;
            row.run_id = cells[0];
            r.master_seed = parse_uint<std::uint64_t>(cells[1]);
            row.axis = cells[2];
            row.axis_value = parse_double(cells[3]);
            row.tcp_param_overrides = cells[4];
            r.total_time = parse_double(cells[5]);
            r.rounds_completed = parse_uint<std::uint32_t>(cells[6]);
            r.final_accuracy = parse_double(cells[7]);
            const auto fk = parse_failure_kind(cells[8]);
            if (!fk) throw CsvParseError("unknown failure_kind '" + std::string(cells[8]) + "'");
            r.failure_kind = *fk;
            r.transport.syn_retransmits = parse_uint<std::uint64_t>(cells[9]);
            r.transport.data_retransmits = parse_uint<std::uint64_t>(cells[10]);
            r.transport.keepalive_probes_sent = parse_uint<std::uint64_t>(cells[11]);
            r.transport.segments_dropped_buffer_full = parse_uint<std::uint64_t>(cells[12]);
            r.bytes_sent = parse_uint<std::uint64_t>(cells[13]);
            r.bytes_delivered = parse_uint<std::uint64_t>(cells[14]);
            row.threshold_class = cells[15];
            if (!row.threshold_class.empty() && !parse_threshold_class(row.threshold_class))
                throw CsvParseError("unknown threshold_class '" + row.threshold_class + "'");
            rows.push_back(std::move(row));
        } catch (const CsvParseError& e) {
            throw CsvParseError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return rows;
}

std::vector<RunRow> read_runs_csv(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path.string());
    return parse_runs_csv(f);
}

std::string summarize(const RunResult& r) {
    std::ostringstream s;
    s << "failure_kind=" << to_string(r.failure_kind) << " rounds=" << r.rounds_completed
      << " total_time_s=" << format_double(r.total_time) << " accuracy=" << format_double(r.final_accuracy)
      << " data_retransmits=" << r.transport.data_retransmits << " syn_retransmits=" << r.transport.syn_retransmits
      << " aborts=" << r.transport.total_aborts();
    return s.str();
}

}  // namespace flsim
