#include "flsim/harness.hpp"

#include <doctest.h>

#include <sstream>

using namespace flsim;

namespace {

ExperimentConfig quick() {
    ExperimentConfig cfg;
    cfg.strategy.num_rounds = 3;
    return cfg;
}

std::vector<std::string> lines(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

RunRow failed_row(FailureKind k, std::string id) {
    RunRow r;
    r.run_id = std::move(id);
    r.result.failure_kind = k;
    return r;
}

}  // namespace

TEST_CASE("apply_axis") {
    const auto d = apply_axis(quick(), SweepAxis::DelayS, 3);
    CHECK(d.link.one_way_delay == 3);
    const auto l = apply_axis(quick(), SweepAxis::LossPct, 40);
    CHECK(l.link.loss_prob == 0.4);
    const auto k = apply_axis(quick(), SweepAxis::ClientFailurePct, 90);
    REQUIRE(k.chaos.actions.size() == 1);
    CHECK(k.chaos.actions[0].after_round == 1u);
    CHECK(std::get<KillClients>(k.chaos.actions[0].kind).fraction == 0.9);
    CHECK_THROWS_AS(apply_axis(quick(), SweepAxis::LossPct, 140), ConfigError);
}

TEST_CASE("run ordering puts failures last") {
    RunResult ok_slow, ok_fast, bad;
    ok_slow.total_time = 10;
    ok_fast.total_time = 5;
    bad.total_time = 1;
    bad.failure_kind = FailureKind::DeadlineNoQuorum;
    CHECK(run_less(ok_fast, ok_slow));
    CHECK(run_less(ok_slow, bad));
    CHECK_FALSE(run_less(bad, ok_fast));
}

TEST_CASE("sweep picks the median seed per value") {
    auto cfg = quick();
    cfg.sweep = SweepSpec{SweepAxis::LossPct, {0, 30}, 3};
    const auto out = run_sweep(cfg, std::nullopt, 1);
    REQUIRE(out.all_runs.size() == 6);
    REQUIRE(out.rows.size() == 2);
    CHECK(out.all_runs[0].run_id == "s000-k000");
    CHECK(out.all_runs[5].run_id == "s001-k002");
    CHECK(out.rows[1].run_id == "s001");
    std::vector<double> times;
    for (int k = 3; k < 6; ++k) times.push_back(out.all_runs[k].result.total_time);
    std::sort(times.begin(), times.end());
    CHECK(out.rows[1].result.total_time == times[1]);
    CHECK(out.rows[1].threshold_class == "Tolerable");
    CHECK(out.table.find("loss_pct | total_time_s") == 0);
}

TEST_CASE("seed count override and validation") {
    auto cfg = quick();
    cfg.sweep = SweepSpec{SweepAxis::DelayS, {0.005, 0.3}, std::nullopt};
    CHECK(run_sweep(cfg, std::nullopt, 1).all_runs.size() == 2);
    CHECK(run_sweep(cfg, 2u, 1).all_runs.size() == 4);
    CHECK_THROWS_AS(run_sweep(cfg, 0u, 1), ConfigError);
    CHECK_THROWS_AS(run_sweep(quick(), std::nullopt, 1), ConfigError);
}

TEST_CASE("parallel execution matches sequential") {
    auto cfg = quick();
    cfg.sweep = SweepSpec{SweepAxis::LossPct, {0, 10, 30}, 2};
    const auto a = run_sweep(cfg, std::nullopt, 1);
    const auto b = run_sweep(cfg, std::nullopt, 4);
    REQUIRE(a.all_runs.size() == b.all_runs.size());
    for (std::size_t i = 0; i < a.all_runs.size(); ++i) {
        CHECK(a.all_runs[i].run_id == b.all_runs[i].run_id);
        CHECK(a.all_runs[i].result == b.all_runs[i].result);
    }
}

TEST_CASE("grid covers the cartesian product over 17 latencies") {
    auto cfg = quick();
    cfg.tcp_grid = TcpGridSpec{"tcp_syn_retries", {3, 6}, default_grid_latencies()};
    const auto g = run_grid(cfg, 1);
    CHECK(g.rows.size() == 34);
    for (std::size_t i = 1; i < 17; ++i) CHECK(g.rows[i].axis_value > g.rows[i - 1].axis_value);
    CHECK(g.rows[0].tcp_param_overrides == "tcp_syn_retries=3");
    const auto m = lines(g.matrix_csv);
    REQUIRE(m.size() == 5);
    CHECK(m[0].rfind("tcp_syn_retries,lat_0,lat_0.05,", 0) == 0);
    CHECK(m[3].rfind("best,", 0) == 0);
    CHECK(m[4].rfind("default_is_best,", 0) == 0);
}

TEST_CASE("a grid holding only the default value equals the delay sweep") {
    auto cfg = quick();
    const std::vector<double> lats{0.005, 0.2, 0.6};
    cfg.tcp_grid = TcpGridSpec{"tcp_keepalive_intvl", {75}, lats};
    const auto g = run_grid(cfg, 1);
    auto sweep_cfg = quick();
    sweep_cfg.sweep = SweepSpec{SweepAxis::DelayS, lats, 1};
    const auto s = run_sweep(sweep_cfg, std::nullopt, 1);
    REQUIRE(g.rows.size() == s.rows.size());
    for (std::size_t i = 0; i < lats.size(); ++i) {
        auto a = g.rows[i].result, b = s.rows[i].result;
        a.config_digest.clear();
        b.config_digest.clear();
        CHECK(a == b);
    }
    CHECK(lines(g.matrix_csv)[3] == "default_is_best,true,true,true");
}

TEST_CASE("recommendations") {
    RunRow ok;
    ok.run_id = "a";
    CHECK(recommend({ok}).find("no remediation needed") != std::string::npos);

    const auto timeout = recommend({ok, failed_row(FailureKind::ConnectTimeout, "b")});
    CHECK(timeout.find("connect_deadline") != std::string::npos);
    CHECK(timeout.find("syn_retries") != std::string::npos);

    const auto stall = recommend({failed_row(FailureKind::BufferStall, "c")});
    CHECK(stall.find("rmem_bytes") != std::string::npos);
    CHECK(stall.find("warning") != std::string::npos);

    const auto quorum = recommend({failed_row(FailureKind::InsufficientClients, "d")});
    CHECK(quorum.find("min_fit_fraction") != std::string::npos);
}
