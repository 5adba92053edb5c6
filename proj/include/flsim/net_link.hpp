#pragma once

#include "flsim/segment.hpp"
#include "flsim/sim_core.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace flsim {

/// Impairment applied to every client-server path, in both directions.
struct LinkConfig {
    SimTime one_way_delay = 0.005;
    double loss_prob = 0.0;
    std::uint32_t queue_limit = 200;
    std::optional<double> rate_cap_bps;
    SimTime jitter = 0.0;

    /// Throws std::invalid_argument naming the offending field.
    void validate() const;

    friend bool operator==(const LinkConfig&, const LinkConfig&) = default;
};

struct Packet {
    EndpointId src{};
    EndpointId dst{};
    Segment segment;

    std::uint32_t size_bytes() const noexcept { return segment.wire_bytes(); }
};

enum class DeliveryOutcome { Scheduled, LossDropped, QueueDropped };

enum class Direction : std::uint8_t { Uplink, Downlink };

struct DirectionStats {
    std::uint64_t transmitted = 0;
    std::uint64_t delivered = 0;
    std::uint64_t loss_dropped = 0;
    std::uint64_t queue_dropped = 0;
    std::uint64_t bytes_transmitted = 0;
    std::uint64_t bytes_delivered = 0;
    /// Wire bytes of Data segments offered to the link.
    std::uint64_t data_bytes_transmitted = 0;

    DirectionStats& operator+=(const DirectionStats& o) noexcept;
};

/// Star topology: one server endpoint, `num_clients` client endpoints, each
/// on its own bidirectional path. Every direction has its own bounded
/// in-flight queue counted in packets.
class Network {
public:
    using Receiver = std::function<void(const Packet&)>;

    Network(Simulator& sim, LinkConfig initial, std::size_t num_clients);

    void attach(EndpointId endpoint, Receiver receiver);

    DeliveryOutcome transmit(Packet packet);

    /// Packets transmitted at or after `at` use `cfg`; in-flight packets keep
    /// the parameters they were sent with.
    void set_link_params(SimTime at, LinkConfig cfg);
    const LinkConfig& config() const noexcept { return config_; }

    /// Silently drops every packet transmitted in [from, until), both ways.
    void blackhole(SimTime from, SimTime until);
    bool blackholed() const noexcept;

    /// A downed endpoint neither sends nor receives (container destroyed).
    void set_endpoint_down(EndpointId endpoint);
    bool endpoint_down(EndpointId endpoint) const;

    std::size_t in_flight(EndpointId client, Direction dir) const;

    const DirectionStats& stats(EndpointId client, Direction dir) const;
    DirectionStats total(Direction dir) const;
    DirectionStats total() const;

private:
    struct PathDirection {
        std::size_t in_flight = 0;
        SimTime serializer_free_at = 0.0;
        DirectionStats stats;
        RngStream* loss_rng = nullptr;
        RngStream* jitter_rng = nullptr;
    };

    PathDirection& path(EndpointId client, Direction dir);
    const PathDirection& path(EndpointId client, Direction dir) const;

    Simulator& sim_;
    LinkConfig config_;
    std::size_t num_clients_;
    std::vector<PathDirection> paths_;  // 2 per client
    std::vector<Receiver> receivers_;
    std::vector<bool> down_;
    std::vector<std::pair<SimTime, SimTime>> blackholes_;
};

}  // namespace flsim
