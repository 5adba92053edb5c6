#pragma once

#include "flsim/chaos.hpp"
#include "flsim/config.hpp"
#include "flsim/fl_types.hpp"
#include "flsim/metrics.hpp"
#include "flsim/model.hpp"
#include "flsim/net_link.hpp"
#include "flsim/sim_core.hpp"
#include "flsim/tcp.hpp"

#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <vector>

namespace flsim {

class ClientDead : public std::logic_error {
public:
    explicit ClientDead(std::uint32_t id);
};

/// Seconds a client waits before reopening a failed or aborted connection.
inline constexpr SimTime kReconnectDelay = 5.0;

/// Wire messages between server and clients. Parameters travel as raw
/// little-endian doubles; both directions are zero-padded to payload_bytes.
namespace wire {
enum class Type : std::uint32_t { Join = 1, FitIns = 2, FitRes = 3 };

struct Message {
    Type type = Type::Join;
    std::uint32_t round = 0;
    std::uint32_t client = 0;
    std::uint64_t n_samples = 0;
    std::vector<double> params;
};

/// Bytes used before padding.
std::size_t encoded_size(std::size_t n_params);
std::vector<std::uint8_t> encode(const Message& m, std::size_t pad_to = 0);
/// Throws std::invalid_argument on malformed input.
Message decode(std::span<const std::uint8_t> bytes);
}  // namespace wire

/// One simulated training run: a server and N clients exchanging FedAvg
/// rounds over the simulated transport.
class FederatedRun : private ChaosTarget {
public:
    explicit FederatedRun(ExperimentConfig cfg);
    ~FederatedRun() override;

    /// Runs to completion or failure. May be called once.
    RunResult execute();

    const ExperimentConfig& config() const noexcept { return cfg_; }
    const std::vector<ChaosLogEntry>& chaos_log() const;
    /// Packets offered to the link by each endpoint after it was killed.
    std::uint64_t packets_from_dead() const;

private:
    struct Client {
        std::uint32_t id = 0;
        const Dataset* shard = nullptr;
        bool alive = true;
        std::unique_ptr<TcpStack> stack;
        TcpConnection* conn = nullptr;
        EventHandle compute_timer;
        EventHandle reconnect_timer;
        bool initial_resolved = false;
    };

    enum class Phase { Connecting, Idle, WaitingQuorum, InRound, Done };

    // ChaosTarget
    Simulator& simulator() override { return sim_; }
    Network& network() override { return net_; }
    std::size_t num_clients() const override { return clients_.size(); }
    bool client_alive(std::uint32_t id) const override;
    void kill_client(std::uint32_t id) override;

    // client side
    void client_connect(Client& c);
    void client_established(Client& c, TcpConnection& conn);
    void client_lost(Client& c, TcpConnection& conn, bool initial_failure);
    void client_message(Client& c, TcpConnection& conn, std::vector<std::uint8_t> bytes);
    void resolve_initial(Client& c);

    // server side
    void server_accept(TcpConnection& conn);
    void server_message(TcpConnection& conn, std::vector<std::uint8_t> bytes);
    void server_abort(TcpConnection& conn);
    std::size_t connected_count() const;
    void start_round();
    void begin_round();
    void on_round_deadline();
    void close_round(bool deadline);
    void finish(FailureKind kind);
    FailureKind diagnose() const;
    std::size_t alive_count() const;
    bool buffer_stalled(std::uint32_t client) const;

    ExperimentConfig cfg_;
    std::uint32_t quorum_;
    Simulator sim_;
    Network net_;
    FederatedData data_;
    TcpStack server_;
    std::vector<Client> clients_;
    std::unique_ptr<ChaosController> chaos_;

    ModelParams global_;
    Phase phase_ = Phase::Connecting;
    std::map<std::uint32_t, TcpConnection*> server_conns_;  // registered clients
    std::map<TcpConnection*, std::uint32_t> conn_owner_;
    std::uint32_t initial_unresolved_ = 0;

    // current round
    RoundRecord round_;
    std::set<std::uint32_t> pending_;
    std::map<std::uint32_t, WeightedUpdate> received_;
    std::set<std::uint32_t> aborted_;
    std::map<std::uint32_t, TcpConnection*> round_conns_;
    EventHandle round_timer_;
    std::uint64_t up_mark_ = 0;
    std::uint64_t down_mark_ = 0;
    std::uint32_t consecutive_failures_ = 0;

    RunResult result_;
    bool executed_ = false;
    std::map<std::uint32_t, std::uint64_t> kill_marks_;  // uplink packets at kill time
};

RunResult run_training(const ExperimentConfig& cfg);

}  // namespace flsim
