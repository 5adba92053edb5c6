#pragma once

#include "flsim/net_link.hpp"
#include "flsim/segment.hpp"
#include "flsim/sim_core.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace flsim {

/// Connection-management tunables. Field names follow the Linux sysctls
/// (net.ipv4.tcp_*); the last two are application-level.
struct TcpParams {
    std::uint32_t syn_retries = 6;
    std::uint32_t synack_retries = 5;
    SimTime keepalive_time = 7200.0;
    SimTime keepalive_intvl = 75.0;
    std::uint32_t keepalive_probes = 9;
    std::uint32_t retries2 = 15;
    std::uint64_t rmem_bytes = 131072;
    std::uint64_t wmem_bytes = 131072;
    std::uint32_t max_syn_backlog = 128;
    bool sack_enabled = true;
    bool window_scaling = true;
    /// Handshake must complete within this many seconds of connect().
    /// Infinity disables the deadline.
    SimTime connect_deadline = 10.0;
    SimTime initial_rto = 1.0;

    void validate() const;

    friend bool operator==(const TcpParams&, const TcpParams&) = default;
};

inline constexpr SimTime kMaxRto = 120.0;
inline constexpr std::uint32_t kUnscaledWindowCap = 65535;
inline constexpr int kDupAckThreshold = 3;

/// Give-up time of an unanswered active open, measured from connect():
/// initial_rto * (2^(syn_retries+1) - 1).
SimTime syn_give_up_time(const TcpParams& params);
/// Time from last receipt until a silent peer is declared dead.
SimTime dead_peer_detection_time(const TcpParams& params);

enum class ConnState : std::uint8_t { Closed, SynSent, SynReceived, Established, Aborted };
std::string_view to_string(ConnState state) noexcept;

enum class ConnectFailure : std::uint8_t { Timeout, BacklogFull };
std::string_view to_string(ConnectFailure failure) noexcept;

enum class AbortKind : std::uint8_t { RetriesExceeded, DeadPeer, PeerReset, Local };
inline constexpr std::size_t kAbortKindCount = 4;
std::string_view to_string(AbortKind kind) noexcept;

struct ConnCounters {
    std::uint64_t syn_retransmits = 0;
    std::uint64_t data_retransmits = 0;
    std::uint64_t keepalive_probes_sent = 0;
    std::uint64_t segments_dropped_buffer_full = 0;
    std::array<std::uint64_t, kAbortKindCount> aborts_by_kind{};

    std::uint64_t aborts(AbortKind kind) const noexcept { return aborts_by_kind[static_cast<std::size_t>(kind)]; }
    std::uint64_t total_aborts() const noexcept;
    ConnCounters& operator+=(const ConnCounters& o) noexcept;
    friend bool operator==(const ConnCounters&, const ConnCounters&) = default;
};

/// One endpoint of a simplified reliable byte stream.
///
/// Data is cut into MSS-sized segments and acknowledged cumulatively, with
/// SACK blocks when enabled. There is no congestion control: the sender is
/// limited only by its send buffer and the peer's advertised window.
///
/// Application messages are length-prefixed (8 bytes) on the stream, so the
/// receiving side reports whole messages.
class TcpConnection {
public:
    struct Callbacks {
        std::function<void()> on_established;
        std::function<void(ConnectFailure)> on_connect_failed;
        std::function<void(std::vector<std::uint8_t>)> on_message;
        /// Raw in-order stream bytes, before message framing is removed.
        std::function<void(std::span<const std::uint8_t>)> on_stream_bytes;
        std::function<void(std::uint64_t message_id)> on_message_acked;
        std::function<void(AbortKind)> on_abort;
    };
    using Transmit = std::function<void(Segment)>;

    TcpConnection(Simulator& sim, TcpParams params, EndpointId local, EndpointId peer, std::uint32_t conn_id,
                  Transmit transmit, Callbacks callbacks = {});
    ~TcpConnection();

    TcpConnection(const TcpConnection&) = delete;
    TcpConnection& operator=(const TcpConnection&) = delete;

    /// Active open: SYN now, retransmitted with doubling timeout.
    void connect();
    /// Passive open in response to `syn`: enters SynReceived and answers.
    void accept(const Segment& syn);

    /// Queues a framed message; returns its id for on_message_acked.
    /// Requires an Established connection.
    std::uint64_t send(std::span<const std::uint8_t> message);
    /// Queues raw bytes without framing (used by transport-level tests).
    void send_stream(std::span<const std::uint8_t> bytes);

    void on_segment(const Segment& segment);

    /// The host died: cancel every timer and never transmit again.
    void silence();
    /// Local teardown without signalling the peer.
    void abandon();

    void set_callbacks(Callbacks callbacks) { cb_ = std::move(callbacks); }

    ConnState state() const noexcept { return state_; }
    std::optional<AbortKind> abort_reason() const noexcept { return abort_reason_; }
    EndpointId local() const noexcept { return local_; }
    EndpointId peer() const noexcept { return peer_; }
    std::uint32_t conn_id() const noexcept { return conn_id_; }
    const TcpParams& params() const noexcept { return params_; }
    const ConnCounters& counters() const noexcept { return counters_; }

    std::uint64_t reassembly_occupancy() const noexcept { return occupancy_; }
    bool receive_buffer_exhausted() const noexcept { return occupancy_ + kMss > params_.rmem_bytes; }
    std::uint64_t bytes_received_in_order() const noexcept { return rcv_nxt_; }
    std::uint64_t bytes_acked() const noexcept { return snd_una_; }
    std::uint64_t bytes_queued() const noexcept { return snd_end_; }
    bool has_outstanding() const noexcept { return snd_una_ < snd_end_; }
    std::uint32_t retransmit_count() const noexcept { return retransmit_count_; }
    SimTime rto() const noexcept { return rto_; }
    std::optional<SimTime> srtt() const noexcept { return srtt_; }
    SimTime idle_since() const noexcept { return idle_since_; }
    SimTime established_at() const noexcept { return established_at_; }

private:
    struct SegInfo {
        std::uint32_t len = 0;
        SimTime sent_at = 0.0;
        std::uint32_t transmissions = 0;
        bool sacked = false;
        bool lost = false;
        bool fast_retransmitted = false;
    };

    void transmit(Segment seg);
    Segment control(SegmentKind kind) const;
    std::uint32_t advertised_window() const noexcept;
    std::vector<SackBlock> sack_blocks(std::uint64_t recent_seq) const;

    void become_established();
    void fail_connect(ConnectFailure why);
    void abort(AbortKind kind);
    void cancel_timers();

    // handshake
    void on_syn_timer();
    void on_synack_timer();
    void on_connect_deadline(bool second_phase);

    // sender
    void append(std::span<const std::uint8_t> bytes);
    void try_send();
    void send_data(std::uint64_t seq, std::uint32_t len, bool retransmission);
    void retransmit_oldest();
    void process_ack(const Segment& seg);
    void arm_rto();
    void on_rto();
    SimTime base_rto() const noexcept;

    // receiver
    void process_data(const Segment& seg);
    void deliver_in_order(std::span<const std::uint8_t> bytes);
    void send_ack(std::uint64_t recent_seq);

    // keepalive
    void arm_keepalive(SimTime at);
    void on_keepalive_timer();
    void note_receipt();

    Simulator& sim_;
    TcpParams params_;
    EndpointId local_;
    EndpointId peer_;
    std::uint32_t conn_id_;
    Transmit transmit_;
    Callbacks cb_;

    ConnState state_ = ConnState::Closed;
    std::optional<AbortKind> abort_reason_;
    bool silenced_ = false;
    ConnCounters counters_;

    // handshake
    SimTime open_at_ = 0.0;
    SimTime established_at_ = 0.0;
    std::uint32_t syn_transmissions_ = 0;
    SimTime handshake_echo_ = -1.0;
    EventHandle syn_timer_;
    EventHandle deadline_timer_;

    // sender
    std::deque<std::uint8_t> send_buf_;  // bytes [snd_una_, snd_end_)
    std::uint64_t snd_una_ = 0;
    std::uint64_t snd_nxt_ = 0;
    std::uint64_t high_tx_ = 0;
    std::uint64_t snd_end_ = 0;
    std::uint64_t peer_right_edge_ = 0;
    std::map<std::uint64_t, SegInfo> scoreboard_;
    std::deque<std::pair<std::uint64_t, std::uint64_t>> message_ends_;  // (end seq, id)
    std::uint64_t next_message_id_ = 1;
    std::uint32_t retransmit_count_ = 0;
    SimTime rto_;
    std::optional<SimTime> srtt_;
    EventHandle rto_timer_;
    int dupacks_ = 0;
    bool in_recovery_ = false;
    SimTime latest_delivered_tx_ = -1.0;
    std::uint64_t recovery_point_ = 0;

    // receiver
    std::uint64_t rcv_nxt_ = 0;
    std::map<std::uint64_t, std::vector<std::uint8_t>> reassembly_;
    std::uint64_t occupancy_ = 0;
    std::vector<std::uint8_t> framing_buf_;

    SimTime ts_recent_ = -1.0;  // peer clock to echo

    // keepalive
    SimTime idle_since_ = 0.0;
    std::uint32_t probes_unanswered_ = 0;
    EventHandle keepalive_timer_;
};

/// Per-endpoint connection table: demultiplexes packets by (peer, conn_id),
/// answers SYNs when listening, and resets segments for unknown connections.
class TcpStack {
public:
    using AcceptFn = std::function<void(TcpConnection&)>;

    TcpStack(Simulator& sim, Network& net, EndpointId self, TcpParams params);

    TcpStack(const TcpStack&) = delete;
    TcpStack& operator=(const TcpStack&) = delete;

    /// Opens a new active connection to `peer`.
    TcpConnection& connect(EndpointId peer, TcpConnection::Callbacks callbacks);
    void listen(AcceptFn on_accept);

    void on_packet(const Packet& packet);
    void silence();

    std::size_t half_open() const noexcept { return half_open_; }
    ConnCounters counters() const;
    EndpointId self() const noexcept { return self_; }
    const TcpParams& params() const noexcept { return params_; }

    template <typename Fn>
    void for_each_connection(Fn&& fn) const {
        for (const auto& [key, conn] : conns_) fn(*conn);
    }

private:
    using Key = std::pair<std::uint32_t, std::uint32_t>;  // (peer, conn_id)

    TcpConnection& create(EndpointId peer, std::uint32_t conn_id);
    void send_rst(EndpointId peer, std::uint32_t conn_id);

    Simulator& sim_;
    Network& net_;
    EndpointId self_;
    TcpParams params_;
    std::optional<AcceptFn> on_accept_;
    std::map<Key, std::unique_ptr<TcpConnection>> conns_;
    std::size_t half_open_ = 0;
    std::uint32_t next_conn_id_ = 1;
    std::uint64_t backlog_rejections_ = 0;
    bool silenced_ = false;
};

}  // namespace flsim
