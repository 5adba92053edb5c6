#include "flsim/harness.hpp"

#include "flsim/fl_runtime.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace flsim {

namespace {

std::string id_part(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i);
    return buf;
}

std::string class_cell(const std::string& axis, double value) {
    if (axis.empty()) return {};
    return std::string(to_string(classify(axis, value).cls));
}

}  // namespace

std::vector<RunRow> execute_runs(const std::vector<RunSpec>& specs, unsigned threads) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(1, specs.size())));

    std::vector<RunRow> rows(specs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;

    auto worker = [&] {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= specs.size()) return;
            try {
                const auto& s = specs[i];
                RunRow row{s.run_id, s.axis, s.axis_value, s.tcp_param_overrides, run_training(s.cfg),
                           class_cell(s.axis, s.axis_value)};
                rows[i] = std::move(row);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);
    std::sort(rows.begin(), rows.end(), [](const RunRow& a, const RunRow& b) { return a.run_id < b.run_id; });
    return rows;
}

RunRow run_single(const ExperimentConfig& cfg) {
    ExperimentConfig single = cfg;
    single.sweep.reset();
    single.tcp_grid.reset();
    return execute_runs({RunSpec{"run-000", "", 0.0, "", single}}, 1).front();
}

ExperimentConfig apply_axis(ExperimentConfig cfg, SweepAxis axis, double value) {
    cfg.sweep.reset();
    cfg.tcp_grid.reset();
    switch (axis) {
        case SweepAxis::DelayS: cfg.link.one_way_delay = value; break;
        case SweepAxis::LossPct: cfg.link.loss_prob = value / 100.0; break;
        case SweepAxis::ClientFailurePct: {
            ChaosAction kill;
            kill.after_round = 1;
            kill.at = 0.0;
            kill.kind = KillClients{value / 100.0, {}};
            cfg.chaos.actions.push_back(kill);
            break;
        }
    }
    cfg.validate();
    return cfg;
}

bool run_less(const RunResult& a, const RunResult& b) {
    const bool fa = a.failure_kind != FailureKind::None;
    const bool fb = b.failure_kind != FailureKind::None;
    if (fa != fb) return !fa;
    return a.total_time < b.total_time;
}

SweepOutcome run_sweep(const ExperimentConfig& cfg, std::optional<std::uint32_t> seeds, unsigned threads) {
    if (!cfg.sweep) throw ConfigError("/sweep", "config has no sweep axis");
    const auto& sw = *cfg.sweep;
    const std::uint32_t k = seeds ? *seeds : sw.seeds ? *sw.seeds : (sw.axis == SweepAxis::LossPct ? 5u : 1u);
    if (k == 0) throw ConfigError("--seeds", "must be >= 1");
    const std::string axis(to_string(sw.axis));

    std::vector<RunSpec> specs;
    for (std::size_t v = 0; v < sw.values.size(); ++v) {
        for (std::uint32_t s = 0; s < k; ++s) {
            ExperimentConfig run = apply_axis(cfg, sw.axis, sw.values[v]);
            run.master_seed = cfg.master_seed + s;
            specs.push_back({id_part("s", v) + "-" + id_part("k", s), axis, sw.values[v], "", std::move(run)});
        }
    }

    SweepOutcome out;
    out.all_runs = execute_runs(specs, threads);
    for (std::size_t v = 0; v < sw.values.size(); ++v) {
        std::vector<const RunRow*> group;
        for (std::uint32_t s = 0; s < k; ++s) group.push_back(&out.all_runs[v * k + s]);
        std::sort(group.begin(), group.end(),
                  [](const RunRow* a, const RunRow* b) { return run_less(a->result, b->result); });
        RunRow median = *group[(k - 1) / 2];
        median.run_id = id_part("s", v);
        out.rows.push_back(std::move(median));
    }

    // Observed class: failure, or completed within 1.5x of the least
    // impaired value's time.
    const RunRow* base = &out.rows.front();
    for (const auto& r : out.rows)
        if (r.axis_value < base->axis_value) base = &r;
    std::ostringstream t;
    t << axis << " | total_time_s | failure_kind | observed | published\n";
    for (const auto& r : out.rows) {
        std::string observed;
        if (r.result.failure_kind != FailureKind::None) observed = "Failure";
        else if (base->result.failure_kind == FailureKind::None &&
                 r.result.total_time <= 1.5 * base->result.total_time)
            observed = "Acceptable";
        else observed = "Tolerable";
        const auto c = classify(sw.axis, r.axis_value);
        t << format_double(r.axis_value) << " | " << format_double(r.result.total_time) << " | "
          << to_string(r.result.failure_kind) << " | " << observed << " | " << to_string(c.cls)
          << (c.interpolated ? " (between bands)" : "") << "\n";
    }
    out.table = t.str();
    return out;
}

GridOutcome run_grid(const ExperimentConfig& cfg, unsigned threads) {
    if (!cfg.tcp_grid) throw ConfigError("/sweep/tcp_grid", "config has no tcp grid");
    const auto& g = *cfg.tcp_grid;
    const auto& lats = g.latencies;

    std::vector<RunSpec> specs;
    for (std::size_t p = 0; p < g.values.size(); ++p) {
        for (std::size_t l = 0; l < lats.size(); ++l) {
            ExperimentConfig run = cfg;
            run.sweep.reset();
            run.tcp_grid.reset();
            set_tcp_param(run.tcp, g.param, g.values[p]);
            run.link.one_way_delay = lats[l];
            run.validate();
            specs.push_back({id_part("g", p) + "-" + id_part("l", l), "delay_s", lats[l],
                             g.param + "=" + format_double(g.values[p]), std::move(run)});
        }
    }
    GridOutcome out;
    out.rows = execute_runs(specs, threads);

    const double default_value = get_tcp_param(TcpParams{}, g.param);
    std::ostringstream m;
    m << g.param;
    for (double l : lats) m << ",lat_" << format_double(l);
    m << '\n';
    for (std::size_t p = 0; p < g.values.size(); ++p) {
        m << format_double(g.values[p]);
        for (std::size_t l = 0; l < lats.size(); ++l) {
            const auto& r = out.rows[p * lats.size() + l].result;
            m << ',';
            if (r.failure_kind == FailureKind::None) m << format_double(r.total_time);
            else m << "fail:" << to_string(r.failure_kind);
        }
        m << '\n';
    }
    std::string best_line = "best", default_line = "default_is_best";
    for (std::size_t l = 0; l < lats.size(); ++l) {
        std::optional<std::size_t> best;
        for (std::size_t p = 0; p < g.values.size(); ++p) {
            const auto& r = out.rows[p * lats.size() + l].result;
            if (r.failure_kind != FailureKind::None) continue;
            if (!best || r.total_time < out.rows[*best * lats.size() + l].result.total_time) best = p;
        }
        best_line += ',' + (best ? format_double(g.values[*best]) : std::string("none"));
        bool default_best = false;
        if (best) {
            const double t_best = out.rows[*best * lats.size() + l].result.total_time;
            for (std::size_t p = 0; p < g.values.size(); ++p) {
                const auto& r = out.rows[p * lats.size() + l].result;
                if (g.values[p] == default_value && r.failure_kind == FailureKind::None && r.total_time == t_best)
                    default_best = true;
            }
        }
        default_line += default_best ? ",true" : ",false";
    }
    m << best_line << '\n' << default_line << '\n';
    out.matrix_csv = m.str();
    return out;
}

std::string recommend(const std::vector<RunRow>& rows) {
    std::map<FailureKind, std::vector<const RunRow*>> by_kind;
    for (const auto& r : rows)
        if (r.result.failure_kind != FailureKind::None) by_kind[r.result.failure_kind].push_back(&r);

    std::ostringstream s;
    s << rows.size() << " runs, " << (rows.size() - [&] {
        std::size_t n = 0;
        for (const auto& [k, v] : by_kind) n += v.size();
        return n;
    }()) << " completed\n";
    if (by_kind.empty()) {
        s << "no remediation needed\n";
        return s.str();
    }
    for (const auto& [kind, list] : by_kind) {
        s << "\n" << to_string(kind) << " (" << list.size() << " runs, e.g. " << list.front()->run_id << ")\n";
        switch (kind) {
            case FailureKind::ConnectTimeout:
                s << "  Recommendation 1: raise the transport and application timeout limits.\n"
                     "  delta: tcp.connect_deadline = 60, tcp.syn_retries = 10\n";
                break;
            case FailureKind::BufferStall:
                s << "  Recommendation 2: enlarge the receive buffer so reassembly survives long loss bursts.\n"
                     "  delta: tcp.rmem_bytes = 1048576 (from 131072)\n"
                     "  warning: larger buffers keep lossy transfers alive longer, so training time can grow "
                     "substantially.\n";
                break;
            case FailureKind::InsufficientClients:
                s << "  Recommendation 3: lower the minimum fit/evaluation fractions so surviving clients form a "
                     "quorum.\n"
                     "  delta: strategy.min_fit_fraction = 0.1, strategy.min_eval_fraction = 0.1\n";
                break;
            case FailureKind::RetriesExceeded:
                s << "  Connections hit the retransmission limit; raise it or shorten dead-peer detection.\n"
                     "  delta: tcp.retries2 = 30, tcp.keepalive_time = 30, tcp.keepalive_intvl = 5\n";
                break;
            case FailureKind::DeadlineNoQuorum:
                s << "  Too few updates arrived before the round deadline; extend it or lower the quorum.\n"
                     "  delta: strategy.round_deadline = 3600, strategy.min_fit_fraction = 0.1\n";
                break;
            case FailureKind::None: break;
        }
    }
    return s.str();
}

}  // namespace flsim
