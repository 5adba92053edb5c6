#include "flsim/net_link.hpp"

#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

using namespace flsim;

namespace {

Packet data_packet(EndpointId src, EndpointId dst, std::uint64_t seq, std::size_t len = 100) {
    Packet p{src, dst, {}};
    p.segment.kind = SegmentKind::Data;
    p.segment.seq = seq;
    p.segment.payload.assign(len, 0);
    return p;
}

struct Recorder {
    std::vector<std::pair<SimTime, std::uint64_t>> got;
};

}  // namespace

TEST_CASE("delivery after the one-way delay") {
    Simulator sim(1);
    LinkConfig cfg;
    cfg.one_way_delay = 5.0;
    Network net(sim, cfg, 1);
    Recorder rx;
    net.attach(kServerEndpoint, [&](const Packet& p) { rx.got.emplace_back(sim.now(), p.segment.seq); });
    CHECK(net.transmit(data_packet(EndpointId{1}, kServerEndpoint, 1)) == DeliveryOutcome::Scheduled);
    sim.run_until(QueueEmpty{});
    REQUIRE(rx.got.size() == 1);
    CHECK(rx.got[0].first == 5.0);
}

TEST_CASE("total loss drops everything") {
    Simulator sim(1);
    LinkConfig cfg;
    cfg.loss_prob = 1.0;
    Network net(sim, cfg, 2);
    int got = 0;
    net.attach(kServerEndpoint, [&](const Packet&) { ++got; });
    for (int i = 0; i < 100; ++i) CHECK(net.transmit(data_packet(EndpointId{2}, kServerEndpoint, i)) == DeliveryOutcome::LossDropped);
    sim.run_until(QueueEmpty{});
    CHECK(got == 0);
    CHECK(net.stats(EndpointId{2}, Direction::Uplink).loss_dropped == 100);
}

TEST_CASE("queue limit tail-drops the 201st in-flight packet") {
    Simulator sim(1);
    Network net(sim, LinkConfig{}, 1);
    net.attach(EndpointId{1}, [](const Packet&) {});
    for (int i = 0; i < 200; ++i) REQUIRE(net.transmit(data_packet(kServerEndpoint, EndpointId{1}, i)) == DeliveryOutcome::Scheduled);
    CHECK(net.in_flight(EndpointId{1}, Direction::Downlink) == 200);
    CHECK(net.transmit(data_packet(kServerEndpoint, EndpointId{1}, 200)) == DeliveryOutcome::QueueDropped);
    // The other direction has its own queue.
    net.attach(kServerEndpoint, [](const Packet&) {});
    CHECK(net.transmit(data_packet(EndpointId{1}, kServerEndpoint, 0)) == DeliveryOutcome::Scheduled);
    sim.run_until(QueueEmpty{});
    CHECK(net.in_flight(EndpointId{1}, Direction::Downlink) == 0);
}

TEST_CASE("link changes apply to packets sent afterwards") {
    Simulator sim(1);
    LinkConfig slow;
    slow.one_way_delay = 0.05;
    Network net(sim, slow, 1);
    std::vector<SimTime> arrivals;
    net.attach(kServerEndpoint, [&](const Packet&) { arrivals.push_back(sim.now()); });
    LinkConfig later = slow;
    later.one_way_delay = 5.0;
    net.set_link_params(100.0, later);
    sim.schedule(99.0, EndpointId{1}, [&] { net.transmit(data_packet(EndpointId{1}, kServerEndpoint, 1)); });
    sim.schedule(101.0, EndpointId{1}, [&] { net.transmit(data_packet(EndpointId{1}, kServerEndpoint, 2)); });
    sim.run_until(QueueEmpty{});
    REQUIRE(arrivals.size() == 2);
    CHECK(arrivals[0] == doctest::Approx(99.05));
    CHECK(arrivals[1] == doctest::Approx(106.0));
}

TEST_CASE("loss fraction converges to the configured probability") {
    Simulator sim(11);
    LinkConfig cfg;
    cfg.loss_prob = 0.5;
    cfg.queue_limit = 1'000'000;
    Network net(sim, cfg, 1);
    net.attach(kServerEndpoint, [](const Packet&) {});
    const int n = 100'000;
    int dropped = 0;
    for (int i = 0; i < n; ++i)
        dropped += net.transmit(data_packet(EndpointId{1}, kServerEndpoint, i, 0)) == DeliveryOutcome::LossDropped;
    CHECK(std::abs(dropped / double(n) - 0.5) < 0.01);
}

TEST_CASE("re-applying the same config changes nothing") {
    auto run = [](bool reapply) {
        Simulator sim(5);
        LinkConfig cfg;
        cfg.loss_prob = 0.3;
        Network net(sim, cfg, 1);
        std::vector<std::pair<SimTime, std::uint64_t>> got;
        net.attach(kServerEndpoint, [&](const Packet& p) { got.emplace_back(sim.now(), p.segment.seq); });
        if (reapply) net.set_link_params(0.0, cfg);
        for (int i = 0; i < 500; ++i)
            sim.schedule(i * 0.01, EndpointId{1}, [&net, i] { net.transmit(data_packet(EndpointId{1}, kServerEndpoint, i)); });
        sim.run_until(QueueEmpty{});
        return got;
    };
    CHECK(run(false) == run(true));
}

TEST_CASE("blackhole and downed endpoints") {
    Simulator sim(1);
    Network net(sim, LinkConfig{}, 2);
    int got = 0;
    net.attach(kServerEndpoint, [&](const Packet&) { ++got; });
    net.blackhole(10.0, 20.0);
    sim.schedule(15.0, EndpointId{1}, [&] { CHECK(net.transmit(data_packet(EndpointId{1}, kServerEndpoint, 1)) == DeliveryOutcome::LossDropped); });
    sim.schedule(20.0, EndpointId{1}, [&] { CHECK(net.transmit(data_packet(EndpointId{1}, kServerEndpoint, 2)) == DeliveryOutcome::Scheduled); });
    sim.schedule(21.0, EndpointId{2}, [&] {
        net.set_endpoint_down(EndpointId{2});
        CHECK(net.transmit(data_packet(EndpointId{2}, kServerEndpoint, 3)) != DeliveryOutcome::Scheduled);
    });
    sim.run_until(QueueEmpty{});
    CHECK(got == 1);
    CHECK(net.endpoint_down(EndpointId{2}));
}

TEST_CASE("invalid link configs are rejected") {
    LinkConfig c;
    c.loss_prob = 1.5;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.queue_limit = 0;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
    c = {};
    c.one_way_delay = -1;
    CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("property: conservation and FIFO order per direction") {
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        Simulator sim(seed);
        RngStream& r = sim.stream("test.traffic");
        LinkConfig cfg;
        cfg.loss_prob = r.uniform01() * 0.6;
        cfg.one_way_delay = r.uniform01();
        cfg.queue_limit = 1 + static_cast<std::uint32_t>(r.below(50));
        Network net(sim, cfg, 3);
        // arrivals[src][dst] holds send stamps in arrival order
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::uint64_t>> arrivals;
        for (std::uint32_t e = 0; e <= 3; ++e)
            net.attach(EndpointId{e}, [&arrivals](const Packet& p) {
                arrivals[{to_index(p.src), to_index(p.dst)}].push_back(p.segment.seq);
            });
        std::uint64_t stamp = 0;
        for (int i = 0; i < 2000; ++i) {
            const auto c = EndpointId{1 + static_cast<std::uint32_t>(r.below(3))};
            const bool up = r.bernoulli(0.5);
            sim.schedule(r.uniform01() * 20, c, [&net, &stamp, c, up] {
                ++stamp;
                net.transmit(up ? data_packet(c, kServerEndpoint, stamp) : data_packet(kServerEndpoint, c, stamp));
            });
        }
        sim.run_until(QueueEmpty{});
        for (std::uint32_t c = 1; c <= 3; ++c)
            for (auto dir : {Direction::Uplink, Direction::Downlink}) {
                const auto& s = net.stats(EndpointId{c}, dir);
                CHECK(s.transmitted == s.delivered + s.loss_dropped + s.queue_dropped);
            }
        for (const auto& [key, stamps] : arrivals)
            for (std::size_t i = 1; i < stamps.size(); ++i) REQUIRE(stamps[i - 1] < stamps[i]);
    }
}

TEST_CASE("property: no loss and room in the queue delivers everything in order") {
    Simulator sim(3);
    LinkConfig cfg;
    cfg.one_way_delay = 0.2;
    Network net(sim, cfg, 1);
    std::vector<std::uint64_t> got;
    net.attach(kServerEndpoint, [&](const Packet& p) { got.push_back(p.segment.seq); });
    for (int i = 0; i < 150; ++i)
        sim.schedule(i * 0.001, EndpointId{1}, [&net, i] { net.transmit(data_packet(EndpointId{1}, kServerEndpoint, i)); });
    sim.run_until(QueueEmpty{});
    REQUIRE(got.size() == 150);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == i);
    CHECK(net.total(Direction::Uplink).delivered == 150);
}
