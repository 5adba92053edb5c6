#pragma once

#include "flsim/config.hpp"
#include "flsim/model.hpp"
#include "flsim/tcp.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

namespace flsim::testing {

/// A client stack and a listening server stack on one simulated path.
struct TcpPair {
    Simulator sim;
    Network net;
    TcpStack server;
    TcpStack client;
    TcpConnection* accepted = nullptr;

    TcpPair(std::uint64_t seed, LinkConfig link, TcpParams client_params, TcpParams server_params)
        : sim(seed, 20'000'000),
          net(sim, link, 1),
          server(sim, net, kServerEndpoint, server_params),
          client(sim, net, EndpointId{1}, client_params) {
        net.attach(kServerEndpoint, [this](const Packet& p) { server.on_packet(p); });
        net.attach(EndpointId{1}, [this](const Packet& p) { client.on_packet(p); });
    }
    TcpPair(std::uint64_t seed, LinkConfig link, TcpParams params) : TcpPair(seed, link, params, params) {}
};

struct TransferOutcome {
    bool completed = false;
    std::optional<AbortKind> aborted;
    std::vector<std::uint8_t> received;
    SimTime established_at = -1.0;
    SimTime done_at = -1.0;
    ConnCounters sender;
};

/// Client connects, then streams `message` to the server.
inline TransferOutcome stream_transfer(const std::vector<std::uint8_t>& message, LinkConfig link, TcpParams params,
                                       std::uint64_t seed) {
    params.connect_deadline = std::numeric_limits<double>::infinity();
    TcpPair pair(seed, link, params);
    TransferOutcome out;
    pair.server.listen([&](TcpConnection& c) {
        TcpConnection::Callbacks cb;
        cb.on_stream_bytes = [&](std::span<const std::uint8_t> b) {
            out.received.insert(out.received.end(), b.begin(), b.end());
            if (out.received.size() >= message.size()) {
                out.completed = true;
                out.done_at = pair.sim.now();
                pair.sim.set_flag("done");
            }
        };
        c.set_callbacks(std::move(cb));
    });
    TcpConnection* conn = nullptr;
    TcpConnection::Callbacks cb;
    cb.on_established = [&] {
        out.established_at = pair.sim.now();
        conn->send_stream(message);
    };
    cb.on_connect_failed = [&](ConnectFailure) { pair.sim.set_flag("done"); };
    cb.on_abort = [&](AbortKind k) {
        out.aborted = k;
        pair.sim.set_flag("done");
    };
    conn = &pair.client.connect(kServerEndpoint, std::move(cb));
    pair.sim.run_until(FlagSet{"done"});
    out.sender = conn->counters();
    return out;
}

/// Loss-free run time: handshake plus Join (3d), then per round a download
/// and an upload of k windows each, around the compute time.
inline double clean_run_time(double d, std::uint32_t rounds, double compute, std::uint64_t framed_bytes,
                             std::uint64_t window) {
    const double k = std::ceil(static_cast<double>(framed_bytes) / static_cast<double>(window));
    return 3.0 * d + rounds * (compute + 2.0 * (2.0 * k - 1.0) * d);
}

/// Wire bytes of one framed message of `framed_bytes`.
inline std::uint64_t wire_bytes(std::uint64_t framed_bytes) {
    const std::uint64_t segs = (framed_bytes + kMss - 1) / kMss;
    return framed_bytes + segs * kHeaderBytes;
}

inline constexpr std::uint64_t kFramedPayload = 300000 + 8;

/// Weighted mean computed independently of aggregate_fedavg: long double
/// sums, updates visited in reverse.
inline std::vector<double> weighted_mean_oracle(const std::vector<WeightedUpdate>& ups) {
    const std::size_t n = ups.front().params.weights.size();
    std::vector<long double> acc(n, 0.0L);
    long double total = 0.0L;
    for (auto it = ups.rbegin(); it != ups.rend(); ++it) {
        const auto w = static_cast<long double>(it->n_samples);
        total += w;
        for (std::size_t j = 0; j < n; ++j) acc[j] += w * static_cast<long double>(it->params.weights[j]);
    }
    std::vector<double> out(n);
    for (std::size_t j = 0; j < n; ++j) out[j] = static_cast<double>(acc[j] / total);
    return out;
}

/// Central finite-difference derivative of the loss along coordinate j.
inline double finite_difference(const ModelParams& m, const Dataset& data, std::size_t j, double h = 1e-6) {
    auto plus = m, minus = m;
    plus.weights[j] += h;
    minus.weights[j] -= h;
    return (logistic_loss(plus, data) - logistic_loss(minus, data)) / (2 * h);
}

}  // namespace flsim::testing
