#include "flsim/tcp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace flsim {

void TcpParams::validate() const {
    auto positive = [](SimTime v, const char* name) {
        if (!(v > 0.0)) throw std::invalid_argument(std::string("tcp.") + name + " must be > 0");
    };
    positive(keepalive_time, "tcp_keepalive_time");
    positive(keepalive_intvl, "tcp_keepalive_intvl");
    positive(connect_deadline, "connect_deadline");
    positive(initial_rto, "initial_rto");
    if (!std::isfinite(keepalive_time) || !std::isfinite(keepalive_intvl) || !std::isfinite(initial_rto))
        throw std::invalid_argument("tcp keepalive and rto durations must be finite");
    if (rmem_bytes < kMss) throw std::invalid_argument("tcp.tcp_rmem must be at least one MSS (1448 bytes)");
    if (wmem_bytes < kMss) throw std::invalid_argument("tcp.tcp_wmem must be at least one MSS (1448 bytes)");
    if (syn_retries > 62 || synack_retries > 62)
        throw std::invalid_argument("tcp.tcp_syn_retries / tcp_synack_retries must be <= 62");
}

SimTime syn_give_up_time(const TcpParams& p) {
    return p.initial_rto * (std::ldexp(1.0, static_cast<int>(p.syn_retries) + 1) - 1.0);
}

SimTime dead_peer_detection_time(const TcpParams& p) {
    return p.keepalive_time + static_cast<double>(p.keepalive_probes) * p.keepalive_intvl;
}

std::string_view to_string(ConnState s) noexcept {
    switch (s) {
        case ConnState::Closed: return "Closed";
        case ConnState::SynSent: return "SynSent";
        case ConnState::SynReceived: return "SynReceived";
        case ConnState::Established: return "Established";
        case ConnState::Aborted: return "Aborted";
    }
    return "?";
}

std::string_view to_string(ConnectFailure f) noexcept {
    return f == ConnectFailure::Timeout ? "Timeout" : "BacklogFull";
}

std::string_view to_string(AbortKind k) noexcept {
    switch (k) {
        case AbortKind::RetriesExceeded: return "RetriesExceeded";
        case AbortKind::DeadPeer: return "DeadPeer";
        case AbortKind::PeerReset: return "PeerReset";
        case AbortKind::Local: return "Local";
    }
    return "?";
}

std::uint64_t ConnCounters::total_aborts() const noexcept {
    std::uint64_t n = 0;
    for (auto v : aborts_by_kind) n += v;
    return n;
}

ConnCounters& ConnCounters::operator+=(const ConnCounters& o) noexcept {
    syn_retransmits += o.syn_retransmits;
    data_retransmits += o.data_retransmits;
    keepalive_probes_sent += o.keepalive_probes_sent;
    segments_dropped_buffer_full += o.segments_dropped_buffer_full;
    for (std::size_t i = 0; i < kAbortKindCount; ++i) aborts_by_kind[i] += o.aborts_by_kind[i];
    return *this;
}

// ---------------------------------------------------------------------------
// TcpConnection

TcpConnection::TcpConnection(Simulator& sim, TcpParams params, EndpointId local, EndpointId peer,
                             std::uint32_t conn_id, Transmit transmit, Callbacks callbacks)
    : sim_(sim),
      params_(params),
      local_(local),
      peer_(peer),
      conn_id_(conn_id),
      transmit_(std::move(transmit)),
      cb_(std::move(callbacks)),
      rto_(params.initial_rto) {
    params_.validate();
}

TcpConnection::~TcpConnection() { cancel_timers(); }

void TcpConnection::cancel_timers() {
    sim_.cancel(syn_timer_);
    sim_.cancel(deadline_timer_);
    sim_.cancel(rto_timer_);
    sim_.cancel(keepalive_timer_);
}

void TcpConnection::transmit(Segment seg) {
    if (silenced_) return;
    transmit_(std::move(seg));
}

std::uint32_t TcpConnection::advertised_window() const noexcept {
    std::uint64_t free = params_.rmem_bytes > occupancy_ ? params_.rmem_bytes - occupancy_ : 0;
    if (!params_.window_scaling) free = std::min<std::uint64_t>(free, kUnscaledWindowCap);
    return static_cast<std::uint32_t>(std::min<std::uint64_t>(free, UINT32_MAX));
}

Segment TcpConnection::control(SegmentKind kind) const {
    Segment s;
    s.kind = kind;
    s.conn_id = conn_id_;
    s.seq = snd_nxt_;
    s.ack = rcv_nxt_;
    s.window = advertised_window();
    s.ts_val = sim_.now();
    s.ts_ecr = ts_recent_;
    return s;
}

void TcpConnection::connect() {
    if (state_ != ConnState::Closed) throw std::logic_error("connect() on a connection that is not closed");
    state_ = ConnState::SynSent;
    open_at_ = sim_.now();
    syn_transmissions_ = 1;
    transmit(control(SegmentKind::Syn));
    syn_timer_ = sim_.schedule_after(params_.initial_rto, local_, [this] { on_syn_timer(); });
    if (std::isfinite(params_.connect_deadline)) {
        deadline_timer_ = sim_.schedule(open_at_ + params_.connect_deadline, local_,
                                        [this] { on_connect_deadline(false); });
    }
}

void TcpConnection::on_syn_timer() {
    syn_timer_ = {};
    if (state_ != ConnState::SynSent) return;
    const std::uint32_t retransmissions = syn_transmissions_ - 1;
    if (retransmissions >= params_.syn_retries) {
        fail_connect(ConnectFailure::Timeout);
        return;
    }
    ++syn_transmissions_;
    ++counters_.syn_retransmits;
    transmit(control(SegmentKind::Syn));
    const SimTime wait = params_.initial_rto * std::ldexp(1.0, static_cast<int>(syn_transmissions_ - 1));
    syn_timer_ = sim_.schedule_after(wait, local_, [this] { on_syn_timer(); });
}

// The deadline re-posts itself once at the same instant so that a SYN-ACK
// already scheduled to arrive exactly at the deadline is processed first;
// the handshake fails only when it completes strictly after the deadline.
void TcpConnection::on_connect_deadline(bool second_phase) {
    deadline_timer_ = {};
    if (state_ != ConnState::SynSent) return;
    if (!second_phase) {
        deadline_timer_ = sim_.schedule(sim_.now(), local_, [this] { on_connect_deadline(true); });
        return;
    }
    fail_connect(ConnectFailure::Timeout);
}

void TcpConnection::accept(const Segment& syn) {
    if (state_ != ConnState::Closed) throw std::logic_error("accept() on a connection that is not closed");
    state_ = ConnState::SynReceived;
    open_at_ = sim_.now();
    peer_right_edge_ = syn.ack + syn.window;
    ts_recent_ = syn.ts_val;
    syn_transmissions_ = 1;
    transmit(control(SegmentKind::SynAck));
    syn_timer_ = sim_.schedule_after(params_.initial_rto, local_, [this] { on_synack_timer(); });
}

void TcpConnection::on_synack_timer() {
    syn_timer_ = {};
    if (state_ != ConnState::SynReceived) return;
    if (syn_transmissions_ - 1 >= params_.synack_retries) {
        fail_connect(ConnectFailure::Timeout);
        return;
    }
    ++syn_transmissions_;
    ++counters_.syn_retransmits;
    transmit(control(SegmentKind::SynAck));
    const SimTime wait = params_.initial_rto * std::ldexp(1.0, static_cast<int>(syn_transmissions_ - 1));
    syn_timer_ = sim_.schedule_after(wait, local_, [this] { on_synack_timer(); });
}

void TcpConnection::become_established() {
    sim_.cancel(syn_timer_);
    sim_.cancel(deadline_timer_);
    state_ = ConnState::Established;
    established_at_ = sim_.now();
    if (handshake_echo_ >= 0.0) {
        srtt_ = sim_.now() - handshake_echo_;
        rto_ = base_rto();
    }
    idle_since_ = sim_.now();
    probes_unanswered_ = 0;
    arm_keepalive(idle_since_ + params_.keepalive_time);
    if (auto f = cb_.on_established) f();
}

void TcpConnection::fail_connect(ConnectFailure why) {
    cancel_timers();
    state_ = ConnState::Closed;
    if (auto f = cb_.on_connect_failed) f(why);
}

void TcpConnection::abort(AbortKind kind) {
    if (state_ == ConnState::Aborted) return;
    cancel_timers();
    state_ = ConnState::Aborted;
    abort_reason_ = kind;
    ++counters_.aborts_by_kind[static_cast<std::size_t>(kind)];
    send_buf_.clear();
    scoreboard_.clear();
    reassembly_.clear();
    occupancy_ = 0;
    if (auto f = cb_.on_abort) f(kind);
}

void TcpConnection::silence() {
    silenced_ = true;
    cancel_timers();
}

void TcpConnection::abandon() {
    if (state_ == ConnState::Aborted || state_ == ConnState::Closed) return;
    abort(AbortKind::Local);
}

// ---------------------------------------------------------------------------
// sender

std::uint64_t TcpConnection::send(std::span<const std::uint8_t> message) {
    if (state_ != ConnState::Established) throw std::logic_error("send() requires an established connection");
    std::uint8_t header[8];
    std::uint64_t len = message.size();
    for (int i = 0; i < 8; ++i) header[i] = static_cast<std::uint8_t>(len >> (8 * i));
    append(header);
    append(message);
    const std::uint64_t id = next_message_id_++;
    message_ends_.emplace_back(snd_end_, id);
    try_send();
    return id;
}

void TcpConnection::send_stream(std::span<const std::uint8_t> bytes) {
    if (state_ != ConnState::Established) throw std::logic_error("send_stream() requires an established connection");
    append(bytes);
    try_send();
}

void TcpConnection::append(std::span<const std::uint8_t> bytes) {
    send_buf_.insert(send_buf_.end(), bytes.begin(), bytes.end());
    snd_end_ += bytes.size();
}

SimTime TcpConnection::base_rto() const noexcept {
    if (!srtt_) return params_.initial_rto;
    return std::min(kMaxRto, std::max(params_.initial_rto, 2.0 * *srtt_));
}

void TcpConnection::send_data(std::uint64_t seq, std::uint32_t len, bool retransmission) {
    Segment s = control(SegmentKind::Data);
    s.seq = seq;
    const auto offset = static_cast<std::ptrdiff_t>(seq - snd_una_);
    s.payload.assign(send_buf_.begin() + offset, send_buf_.begin() + offset + len);
    SegInfo& info = scoreboard_[seq];
    info.len = len;
    info.sent_at = sim_.now();
    ++info.transmissions;
    if (retransmission) ++counters_.data_retransmits;
    transmit(std::move(s));
}

void TcpConnection::retransmit_oldest() {
    auto it = scoreboard_.find(snd_una_);
    if (it == scoreboard_.end()) return;
    it->second.lost = false;
    send_data(snd_una_, it->second.len, true);
}

void TcpConnection::try_send() {
    if (state_ != ConnState::Established || silenced_) return;
    if (params_.sack_enabled) {
        for (auto& [seq, info] : scoreboard_) {
            if (info.lost && !info.sacked) {
                info.lost = false;
                send_data(seq, info.len, true);
            }
        }
    }
    const std::uint64_t limit = std::min(snd_una_ + params_.wmem_bytes, peer_right_edge_);
    while (snd_nxt_ < snd_end_) {
        const bool resend = snd_nxt_ < high_tx_;
        std::uint32_t len = 0;
        if (resend) {
            const auto it = scoreboard_.find(snd_nxt_);
            if (it == scoreboard_.end()) throw std::logic_error("scoreboard lost track of a sent segment");
            len = it->second.len;
            if (it->second.sacked) {
                snd_nxt_ += len;
                continue;
            }
        } else {
            len = static_cast<std::uint32_t>(std::min<std::uint64_t>(kMss, snd_end_ - snd_nxt_));
        }
        if (snd_nxt_ + len > limit) break;
        send_data(snd_nxt_, len, resend);
        snd_nxt_ += len;
        high_tx_ = std::max(high_tx_, snd_nxt_);
    }
    if (snd_una_ < high_tx_ && !sim_.pending(rto_timer_)) arm_rto();
}

void TcpConnection::arm_rto() {
    sim_.cancel(rto_timer_);
    rto_timer_ = sim_.schedule_after(rto_, local_, [this] { on_rto(); });
}

void TcpConnection::on_rto() {
    rto_timer_ = {};
    if (state_ != ConnState::Established || snd_una_ >= high_tx_) return;
    ++retransmit_count_;
    if (retransmit_count_ > params_.retries2) {
        abort(AbortKind::RetriesExceeded);
        return;
    }
    rto_ = std::min(rto_ * 2.0, kMaxRto);
    dupacks_ = 0;
    in_recovery_ = false;
    if (params_.sack_enabled) {
        // Only the oldest hole goes out again. The rest are recovered by
        // time-ordered detection once that retransmission is acknowledged.
        bool first = true;
        for (auto& [seq, info] : scoreboard_) {
            if (info.sacked) continue;
            info.fast_retransmitted = true;
            if (first) info.lost = true;
            first = false;
        }
    } else {
        // Go-back-N from the oldest unacknowledged byte.
        snd_nxt_ = snd_una_;
    }
    arm_rto();
    try_send();
}

void TcpConnection::process_ack(const Segment& seg) {
    const std::uint64_t ack = std::min(seg.ack, high_tx_);
    bool progress = false;
    if (ack > snd_una_) {
        auto it = scoreboard_.begin();
        while (it != scoreboard_.end() && it->first + it->second.len <= ack) it = scoreboard_.erase(it);
        std::optional<SimTime> sample;
        if (seg.ts_ecr >= 0.0) sample = sim_.now() - seg.ts_ecr;
        send_buf_.erase(send_buf_.begin(), send_buf_.begin() + static_cast<std::ptrdiff_t>(ack - snd_una_));
        snd_una_ = ack;
        snd_nxt_ = std::max(snd_nxt_, snd_una_);
        if (sample) {
            srtt_ = srtt_ ? 0.875 * *srtt_ + 0.125 * *sample : *sample;
        }
        retransmit_count_ = 0;
        rto_ = base_rto();
        dupacks_ = 0;
        progress = true;
        peer_right_edge_ = ack + seg.window;
        if (!params_.sack_enabled && in_recovery_) {
            if (ack >= recovery_point_) in_recovery_ = false;
            else retransmit_oldest();  // partial ack: next hole
        }
        while (!message_ends_.empty() && message_ends_.front().first <= snd_una_) {
            const auto id = message_ends_.front().second;
            message_ends_.pop_front();
            if (auto f = cb_.on_message_acked) f(id);
            if (state_ != ConnState::Established) return;
        }
    } else if (seg.ack == snd_una_) {
        peer_right_edge_ = std::max<std::uint64_t>(snd_una_, seg.ack + seg.window);
        if (seg.kind == SegmentKind::Ack && snd_una_ < high_tx_) {
            ++dupacks_;
            if (!params_.sack_enabled && dupacks_ == kDupAckThreshold && !in_recovery_) {
                in_recovery_ = true;
                recovery_point_ = high_tx_;
                retransmit_oldest();
            }
        }
    }

    if (params_.sack_enabled && !seg.sack.empty()) {
        for (const auto& block : seg.sack) {
            for (auto it = scoreboard_.lower_bound(block.begin);
                 it != scoreboard_.end() && it->first + it->second.len <= block.end; ++it) {
                it->second.sacked = true;
                it->second.lost = false;
            }
        }
        // A hole with at least DupThresh selectively acknowledged segments
        // above it is fast-retransmitted once.
        int sacked_above = 0;
        for (auto it = scoreboard_.rbegin(); it != scoreboard_.rend(); ++it) {
            SegInfo& info = it->second;
            if (info.sacked) {
                ++sacked_above;
            } else if (sacked_above >= kDupAckThreshold && !info.fast_retransmitted) {
                info.fast_retransmitted = true;
                info.lost = true;
            }
        }
    }
    if (params_.sack_enabled && seg.ts_ecr >= 0.0) {
        // Time-ordered detection: anything still unacknowledged that was
        // (re)sent strictly before a transmission the peer has now received
        // is presumed lost. This also catches lost retransmissions.
        latest_delivered_tx_ = std::max(latest_delivered_tx_, seg.ts_ecr);
        for (auto& [seq, info] : scoreboard_) {
            if (!info.sacked && !info.lost && info.sent_at < latest_delivered_tx_) {
                info.lost = true;
                info.fast_retransmitted = true;
            }
        }
    }

    if (progress) {
        if (snd_una_ < high_tx_) arm_rto();
        else sim_.cancel(rto_timer_);
    }
    try_send();
}

// ---------------------------------------------------------------------------
// receiver

void TcpConnection::deliver_in_order(std::span<const std::uint8_t> bytes) {
    if (auto f = cb_.on_stream_bytes) f(bytes);
    if (!cb_.on_message) return;
    framing_buf_.insert(framing_buf_.end(), bytes.begin(), bytes.end());
    std::size_t consumed = 0;
    while (framing_buf_.size() - consumed >= 8) {
        std::uint64_t len = 0;
        for (int i = 0; i < 8; ++i) len |= static_cast<std::uint64_t>(framing_buf_[consumed + i]) << (8 * i);
        if (framing_buf_.size() - consumed - 8 < len) break;
        const auto first = framing_buf_.begin() + static_cast<std::ptrdiff_t>(consumed + 8);
        std::vector<std::uint8_t> message(first, first + static_cast<std::ptrdiff_t>(len));
        consumed += 8 + len;
        if (auto f = cb_.on_message) f(std::move(message));
        if (state_ != ConnState::Established) return;
    }
    framing_buf_.erase(framing_buf_.begin(), framing_buf_.begin() + static_cast<std::ptrdiff_t>(consumed));
}

void TcpConnection::process_data(const Segment& seg) {
    const std::uint64_t len = seg.payload.size();
    if (len == 0) return;
    const std::uint64_t end = seg.seq + len;
    if (end <= rcv_nxt_) {
        send_ack(seg.seq);
        return;
    }
    if (seg.seq <= rcv_nxt_) {
        const auto skip = static_cast<std::size_t>(rcv_nxt_ - seg.seq);
        rcv_nxt_ = end;
        std::vector<std::uint8_t> run(seg.payload.begin() + static_cast<std::ptrdiff_t>(skip), seg.payload.end());
        while (!reassembly_.empty() && reassembly_.begin()->first <= rcv_nxt_) {
            auto node = reassembly_.extract(reassembly_.begin());
            const auto& buf = node.mapped();
            occupancy_ -= buf.size();
            const std::uint64_t seg_end = node.key() + buf.size();
            if (seg_end > rcv_nxt_) {
                const auto from = static_cast<std::ptrdiff_t>(rcv_nxt_ - node.key());
                run.insert(run.end(), buf.begin() + from, buf.end());
                rcv_nxt_ = seg_end;
            }
        }
        send_ack(seg.seq);
        deliver_in_order(run);
        return;
    }
    if (reassembly_.count(seg.seq) == 0) {
        if (occupancy_ + len <= params_.rmem_bytes) {
            reassembly_.emplace(seg.seq, seg.payload);
            occupancy_ += len;
        } else {
            ++counters_.segments_dropped_buffer_full;
        }
    }
    send_ack(seg.seq);
}

std::vector<SackBlock> TcpConnection::sack_blocks(std::uint64_t recent_seq) const {
    std::vector<SackBlock> blocks;
    for (const auto& [seq, buf] : reassembly_) {
        if (!blocks.empty() && blocks.back().end == seq) blocks.back().end = seq + buf.size();
        else blocks.push_back({seq, seq + buf.size()});
    }
    // The block holding the segment that triggered this ACK goes first.
    auto recent = std::find_if(blocks.begin(), blocks.end(),
                               [&](const SackBlock& b) { return recent_seq >= b.begin && recent_seq < b.end; });
    if (recent != blocks.end()) std::rotate(blocks.begin(), recent, recent + 1);
    if (blocks.size() > kMaxSackBlocks) blocks.resize(kMaxSackBlocks);
    return blocks;
}

void TcpConnection::send_ack(std::uint64_t recent_seq) {
    Segment s = control(SegmentKind::Ack);
    if (params_.sack_enabled && !reassembly_.empty()) s.sack = sack_blocks(recent_seq);
    transmit(std::move(s));
}

// ---------------------------------------------------------------------------
// keepalive

void TcpConnection::arm_keepalive(SimTime at) {
    sim_.cancel(keepalive_timer_);
    keepalive_timer_ = sim_.schedule(std::max(at, sim_.now()), local_, [this] { on_keepalive_timer(); });
}

void TcpConnection::note_receipt() {
    idle_since_ = sim_.now();
    probes_unanswered_ = 0;
}

void TcpConnection::on_keepalive_timer() {
    keepalive_timer_ = {};
    if (state_ != ConnState::Established) return;
    if (snd_una_ < high_tx_ || snd_nxt_ < snd_end_) {
        // The retransmission timer owns liveness while data is outstanding.
        arm_keepalive(sim_.now() + params_.keepalive_time);
        return;
    }
    const SimTime due = idle_since_ + params_.keepalive_time;
    if (probes_unanswered_ == 0 && sim_.now() < due) {
        arm_keepalive(due);
        return;
    }
    if (probes_unanswered_ >= params_.keepalive_probes) {
        abort(AbortKind::DeadPeer);
        return;
    }
    ++probes_unanswered_;
    ++counters_.keepalive_probes_sent;
    transmit(control(SegmentKind::KeepaliveProbe));
    arm_keepalive(sim_.now() + params_.keepalive_intvl);
}

// ---------------------------------------------------------------------------

void TcpConnection::on_segment(const Segment& seg) {
    if (silenced_ || seg.conn_id != conn_id_) return;
    switch (state_) {
        case ConnState::Closed:
        case ConnState::Aborted:
            return;
        case ConnState::SynSent:
            if (seg.kind == SegmentKind::SynAck) {
                peer_right_edge_ = seg.ack + seg.window;
                ts_recent_ = seg.ts_val;
                handshake_echo_ = seg.ts_ecr;
                become_established();
                if (state_ == ConnState::Established) transmit(control(SegmentKind::Ack));
            } else if (seg.kind == SegmentKind::Rst) {
                fail_connect(ConnectFailure::BacklogFull);
            }
            return;
        case ConnState::SynReceived:
            if (seg.kind == SegmentKind::Syn) {
                transmit(control(SegmentKind::SynAck));
                return;
            }
            if (seg.kind == SegmentKind::Rst) {
                fail_connect(ConnectFailure::Timeout);
                return;
            }
            handshake_echo_ = seg.ts_ecr;
            become_established();
            if (state_ != ConnState::Established) return;
            break;
        case ConnState::Established:
            break;
    }

    note_receipt();
    ts_recent_ = seg.ts_val;
    switch (seg.kind) {
        case SegmentKind::Syn:
            return;
        case SegmentKind::SynAck:
            transmit(control(SegmentKind::Ack));
            return;
        case SegmentKind::Rst:
            abort(AbortKind::PeerReset);
            return;
        case SegmentKind::KeepaliveProbe:
            transmit(control(SegmentKind::ProbeAck));
            [[fallthrough]];
        case SegmentKind::ProbeAck:
            // Keepalive traffic proves the path is back: collapse any
            // retransmission backoff and resend the oldest segment now.
            if (retransmit_count_ > 0 && snd_una_ < high_tx_) {
                rto_ = base_rto();
                retransmit_oldest();
                arm_rto();
            }
            return;
        case SegmentKind::Ack:
        case SegmentKind::Data:
            process_ack(seg);
            if (state_ == ConnState::Established && seg.kind == SegmentKind::Data) process_data(seg);
            return;
    }
}

// ---------------------------------------------------------------------------
// TcpStack

TcpStack::TcpStack(Simulator& sim, Network& net, EndpointId self, TcpParams params)
    : sim_(sim), net_(net), self_(self), params_(params) {
    params_.validate();
}

TcpConnection& TcpStack::create(EndpointId peer, std::uint32_t conn_id) {
    auto transmit = [this, peer](Segment s) { net_.transmit(Packet{self_, peer, std::move(s)}); };
    auto conn = std::make_unique<TcpConnection>(sim_, params_, self_, peer, conn_id, std::move(transmit));
    auto& ref = *conn;
    conns_[Key{to_index(peer), conn_id}] = std::move(conn);
    return ref;
}

TcpConnection& TcpStack::connect(EndpointId peer, TcpConnection::Callbacks callbacks) {
    auto& conn = create(peer, next_conn_id_++);
    conn.set_callbacks(std::move(callbacks));
    conn.connect();
    return conn;
}

void TcpStack::listen(AcceptFn on_accept) { on_accept_ = std::move(on_accept); }

void TcpStack::send_rst(EndpointId peer, std::uint32_t conn_id) {
    Segment s;
    s.kind = SegmentKind::Rst;
    s.conn_id = conn_id;
    net_.transmit(Packet{self_, peer, std::move(s)});
}

void TcpStack::on_packet(const Packet& packet) {
    if (silenced_) return;
    const Segment& seg = packet.segment;
    const Key key{to_index(packet.src), seg.conn_id};
    auto it = conns_.find(key);

    TcpConnection* conn = it == conns_.end() ? nullptr : it->second.get();
    const bool reopen = conn && conn->state() == ConnState::Closed && seg.kind == SegmentKind::Syn;
    if ((!conn || reopen) && seg.kind == SegmentKind::Syn && on_accept_) {
        if (half_open_ >= params_.max_syn_backlog) {
            ++backlog_rejections_;
            send_rst(packet.src, seg.conn_id);
            return;
        }
        if (!conn) conn = &create(packet.src, seg.conn_id);
        ++half_open_;
        TcpConnection::Callbacks wrap;
        wrap.on_established = [this, conn] {
            --half_open_;
            if (on_accept_) (*on_accept_)(*conn);
        };
        wrap.on_connect_failed = [this](ConnectFailure) { --half_open_; };
        conn->set_callbacks(std::move(wrap));
        conn->accept(seg);
        return;
    }
    if (!conn || conn->state() == ConnState::Aborted || conn->state() == ConnState::Closed) {
        if (seg.kind != SegmentKind::Rst) send_rst(packet.src, seg.conn_id);
        return;
    }
    conn->on_segment(seg);
}

void TcpStack::silence() {
    silenced_ = true;
    for (auto& [key, conn] : conns_) conn->silence();
}

ConnCounters TcpStack::counters() const {
    ConnCounters sum;
    for (const auto& [key, conn] : conns_) sum += conn->counters();
    return sum;
}

}  // namespace flsim
