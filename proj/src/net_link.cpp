#include "flsim/net_link.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace flsim {

std::string_view to_string(SegmentKind kind) noexcept {
    switch (kind) {
        case SegmentKind::Syn: return "SYN";
        case SegmentKind::SynAck: return "SYN-ACK";
        case SegmentKind::Ack: return "ACK";
        case SegmentKind::Data: return "DATA";
        case SegmentKind::KeepaliveProbe: return "KEEPALIVE";
        case SegmentKind::ProbeAck: return "PROBE-ACK";
        case SegmentKind::Rst: return "RST";
    }
    return "?";
}

void LinkConfig::validate() const {
    if (!(one_way_delay >= 0.0) || !std::isfinite(one_way_delay))
        throw std::invalid_argument("link.one_way_delay must be a finite value >= 0");
    if (!(loss_prob >= 0.0 && loss_prob <= 1.0))
        throw std::invalid_argument("link.loss_prob must lie in [0, 1]");
    if (queue_limit < 1) throw std::invalid_argument("link.queue_limit must be >= 1");
    if (rate_cap_bps && !(*rate_cap_bps > 0.0))
        throw std::invalid_argument("link.rate_cap must be > 0 bits/s when set");
    if (!(jitter >= 0.0) || !std::isfinite(jitter))
        throw std::invalid_argument("link.jitter must be a finite value >= 0");
}

DirectionStats& DirectionStats::operator+=(const DirectionStats& o) noexcept {
    transmitted += o.transmitted;
    delivered += o.delivered;
    loss_dropped += o.loss_dropped;
    queue_dropped += o.queue_dropped;
    bytes_transmitted += o.bytes_transmitted;
    bytes_delivered += o.bytes_delivered;
    data_bytes_transmitted += o.data_bytes_transmitted;
    return *this;
}

namespace {

std::string stream_label(const char* what, std::size_t client, Direction dir) {
    return std::string("link.") + what + "." + std::to_string(client) +
           (dir == Direction::Uplink ? ".up" : ".down");
}

}  // namespace

Network::Network(Simulator& sim, LinkConfig initial, std::size_t num_clients)
    : sim_(sim),
      config_(initial),
      num_clients_(num_clients),
      paths_(2 * num_clients),
      receivers_(num_clients + 1),
      down_(num_clients + 1, false) {
    config_.validate();
    for (std::size_t c = 1; c <= num_clients; ++c) {
        for (Direction dir : {Direction::Uplink, Direction::Downlink}) {
            auto& pd = paths_[2 * (c - 1) + (dir == Direction::Uplink ? 0 : 1)];
            pd.loss_rng = &sim_.stream(stream_label("loss", c, dir));
            pd.jitter_rng = &sim_.stream(stream_label("jitter", c, dir));
        }
    }
}

void Network::attach(EndpointId endpoint, Receiver receiver) {
    receivers_.at(to_index(endpoint)) = std::move(receiver);
}

Network::PathDirection& Network::path(EndpointId client, Direction dir) {
    const auto c = to_index(client);
    if (c == 0 || c > num_clients_) throw std::out_of_range("no path for endpoint " + std::to_string(c));
    return paths_[2 * (c - 1) + (dir == Direction::Uplink ? 0 : 1)];
}

const Network::PathDirection& Network::path(EndpointId client, Direction dir) const {
    return const_cast<Network*>(this)->path(client, dir);
}

bool Network::blackholed() const noexcept {
    const SimTime now = sim_.now();
    return std::any_of(blackholes_.begin(), blackholes_.end(),
                       [now](const auto& w) { return now >= w.first && now < w.second; });
}

DeliveryOutcome Network::transmit(Packet packet) {
    const bool uplink = packet.src != kServerEndpoint;
    const EndpointId client = uplink ? packet.src : packet.dst;
    const Direction dir = uplink ? Direction::Uplink : Direction::Downlink;
    if ((uplink && packet.dst != kServerEndpoint) || (!uplink && packet.dst == kServerEndpoint))
        throw std::invalid_argument("packets must travel between a client and the server");

    PathDirection& pd = path(client, dir);
    const std::uint32_t size = packet.size_bytes();
    ++pd.stats.transmitted;
    pd.stats.bytes_transmitted += size;
    if (packet.segment.kind == SegmentKind::Data) pd.stats.data_bytes_transmitted += size;

    const bool lost = pd.loss_rng->bernoulli(config_.loss_prob);
    if (lost || down_[to_index(packet.src)] || down_[to_index(packet.dst)] || blackholed()) {
        ++pd.stats.loss_dropped;
        return DeliveryOutcome::LossDropped;
    }
    if (pd.in_flight >= config_.queue_limit) {
        ++pd.stats.queue_dropped;
        return DeliveryOutcome::QueueDropped;
    }

    const SimTime now = sim_.now();
    SimTime departs = now;
    if (config_.rate_cap_bps) {
        const SimTime start = std::max(now, pd.serializer_free_at);
        departs = start + static_cast<double>(size) * 8.0 / *config_.rate_cap_bps;
        pd.serializer_free_at = departs;
    }
    SimTime arrival = departs + config_.one_way_delay;
    if (config_.jitter > 0.0) {
        arrival = std::max(departs, arrival + (2.0 * pd.jitter_rng->uniform01() - 1.0) * config_.jitter);
    }

    ++pd.in_flight;
    const EndpointId dst = packet.dst;
    sim_.schedule(arrival, dst, [this, client, dir, size, p = std::move(packet)]() {
        PathDirection& d = path(client, dir);
        --d.in_flight;
        ++d.stats.delivered;
        d.stats.bytes_delivered += size;
        const auto idx = to_index(p.dst);
        if (!down_[idx] && receivers_[idx]) receivers_[idx](p);
    });
    return DeliveryOutcome::Scheduled;
}

void Network::set_link_params(SimTime at, LinkConfig cfg) {
    cfg.validate();
    if (at < sim_.now()) throw SchedulingInPast(at, sim_.now());
    if (at == sim_.now()) {
        config_ = cfg;
        return;
    }
    sim_.schedule(at, kServerEndpoint, [this, cfg]() { config_ = cfg; });
}

void Network::blackhole(SimTime from, SimTime until) {
    if (!(until > from)) throw std::invalid_argument("blackhole window must have positive duration");
    blackholes_.emplace_back(from, until);
}

void Network::set_endpoint_down(EndpointId endpoint) { down_.at(to_index(endpoint)) = true; }

bool Network::endpoint_down(EndpointId endpoint) const { return down_.at(to_index(endpoint)); }

std::size_t Network::in_flight(EndpointId client, Direction dir) const { return path(client, dir).in_flight; }

const DirectionStats& Network::stats(EndpointId client, Direction dir) const { return path(client, dir).stats; }

DirectionStats Network::total(Direction dir) const {
    DirectionStats sum;
    for (std::size_t c = 1; c <= num_clients_; ++c) sum += stats(EndpointId{static_cast<std::uint32_t>(c)}, dir);
    return sum;
}

DirectionStats Network::total() const {
    DirectionStats sum = total(Direction::Uplink);
    sum += total(Direction::Downlink);
    return sum;
}

}  // namespace flsim
