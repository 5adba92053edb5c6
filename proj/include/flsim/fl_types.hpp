#pragma once

#include "flsim/sim_core.hpp"
#include "flsim/tcp.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace flsim {

struct StrategyConfig {
    std::uint32_t num_clients = 10;
    std::uint32_t num_rounds = 20;
    double min_fit_fraction = 0.1;
    double min_eval_fraction = 0.1;
    SimTime round_deadline = 1800.0;
    std::uint32_t local_epochs = 1;
    std::uint64_t payload_bytes = 300000;
    /// Simulated seconds of local training per epoch.
    SimTime base_compute = 30.0;

    void validate() const;
    /// ceil(min_fit_fraction * num_clients), robust to representation error.
    std::uint32_t quorum() const;

    friend bool operator==(const StrategyConfig&, const StrategyConfig&) = default;
};

enum class FailureKind : std::uint8_t {
    None,
    ConnectTimeout,
    RetriesExceeded,
    BufferStall,
    InsufficientClients,
    DeadlineNoQuorum,
};
std::string_view to_string(FailureKind kind) noexcept;
std::optional<FailureKind> parse_failure_kind(std::string_view text) noexcept;

enum class RoundStatus : std::uint8_t { Completed, InsufficientClients, DeadlineNoQuorum, TransportAbort };
std::string_view to_string(RoundStatus status) noexcept;
std::optional<RoundStatus> parse_round_status(std::string_view text) noexcept;

struct RoundRecord {
    std::uint32_t round_index = 0;
    RoundStatus status = RoundStatus::Completed;
    std::vector<std::uint32_t> participants;
    SimTime started_at = 0.0;
    SimTime ended_at = 0.0;
    std::uint32_t updates_received = 0;
    double eval_accuracy = 0.0;
    /// Participants whose update was not in when the round closed, either
    /// because the deadline passed or because their connection aborted.
    std::vector<std::uint32_t> excluded_by_deadline;
    /// Subset of the excluded whose connection aborted during the round.
    std::vector<std::uint32_t> aborted;
    /// A late transfer had its receiver's reassembly buffer full or
    /// overflowing when the round closed.
    bool buffer_stalled = false;
    std::uint64_t uplink_bytes = 0;
    std::uint64_t downlink_bytes = 0;

    friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

}  // namespace flsim
