#include "flsim/fl_runtime.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace flsim {

void StrategyConfig::validate() const {
    if (num_clients < 1) throw std::invalid_argument("strategy.num_clients must be >= 1");
    if (!(min_fit_fraction > 0.0 && min_fit_fraction <= 1.0))
        throw std::invalid_argument("strategy.min_fit_fraction must lie in (0, 1]");
    if (!(min_eval_fraction > 0.0 && min_eval_fraction <= 1.0))
        throw std::invalid_argument("strategy.min_eval_fraction must lie in (0, 1]");
    if (!(round_deadline > 0.0)) throw std::invalid_argument("strategy.round_deadline must be > 0");
    if (!(base_compute >= 0.0) || !std::isfinite(base_compute))
        throw std::invalid_argument("strategy.base_compute must be a finite value >= 0");
}

std::uint32_t StrategyConfig::quorum() const {
    return static_cast<std::uint32_t>(std::ceil(min_fit_fraction * num_clients - 1e-9));
}

std::string_view to_string(FailureKind k) noexcept {
    switch (k) {
        case FailureKind::None: return "None";
        case FailureKind::ConnectTimeout: return "ConnectTimeout";
        case FailureKind::RetriesExceeded: return "RetriesExceeded";
        case FailureKind::BufferStall: return "BufferStall";
        case FailureKind::InsufficientClients: return "InsufficientClients";
        case FailureKind::DeadlineNoQuorum: return "DeadlineNoQuorum";
    }
    return "?";
}

std::optional<FailureKind> parse_failure_kind(std::string_view text) noexcept {
    for (auto k : {FailureKind::None, FailureKind::ConnectTimeout, FailureKind::RetriesExceeded,
                   FailureKind::BufferStall, FailureKind::InsufficientClients, FailureKind::DeadlineNoQuorum})
        if (to_string(k) == text) return k;
    return std::nullopt;
}

std::string_view to_string(RoundStatus s) noexcept {
    switch (s) {
        case RoundStatus::Completed: return "Completed";
        case RoundStatus::InsufficientClients: return "InsufficientClients";
        case RoundStatus::DeadlineNoQuorum: return "DeadlineNoQuorum";
        case RoundStatus::TransportAbort: return "TransportAbort";
    }
    return "?";
}

std::optional<RoundStatus> parse_round_status(std::string_view text) noexcept {
    for (auto s : {RoundStatus::Completed, RoundStatus::InsufficientClients, RoundStatus::DeadlineNoQuorum,
                   RoundStatus::TransportAbort})
        if (to_string(s) == text) return s;
    return std::nullopt;
}

ClientDead::ClientDead(std::uint32_t id) : std::logic_error("client " + std::to_string(id) + " is dead") {}

// ---------------------------------------------------------------------------
// wire format

namespace wire {

namespace {
constexpr std::size_t kHeader = 24;

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[at + i]) << (8 * i);
    return v;
}
}  // namespace

std::size_t encoded_size(std::size_t n_params) { return kHeader + 8 * n_params; }

std::vector<std::uint8_t> encode(const Message& m, std::size_t pad_to) {
    std::vector<std::uint8_t> out;
    out.reserve(std::max(pad_to, encoded_size(m.params.size())));
    put(out, static_cast<std::uint32_t>(m.type), 4);
    put(out, m.round, 4);
    put(out, m.client, 4);
    put(out, m.params.size(), 4);
    put(out, m.n_samples, 8);
    for (double p : m.params) put(out, std::bit_cast<std::uint64_t>(p), 8);
    if (out.size() < pad_to) out.resize(pad_to, 0);
    return out;
}

Message decode(std::span<const std::uint8_t> in) {
    if (in.size() < kHeader) throw std::invalid_argument("message shorter than its header");
    Message m;
    const auto type = get(in, 0, 4);
    if (type < 1 || type > 3) throw std::invalid_argument("unknown message type");
    m.type = static_cast<Type>(type);
    m.round = static_cast<std::uint32_t>(get(in, 4, 4));
    m.client = static_cast<std::uint32_t>(get(in, 8, 4));
    const auto n = get(in, 12, 4);
    m.n_samples = get(in, 16, 8);
    if (encoded_size(n) > in.size()) throw std::invalid_argument("message truncated");
    m.params.resize(n);
    for (std::size_t i = 0; i < n; ++i) m.params[i] = std::bit_cast<double>(get(in, kHeader + 8 * i, 8));
    return m;
}

}  // namespace wire

// ---------------------------------------------------------------------------

namespace {
constexpr const char* kDoneFlag = "training.done";
constexpr std::size_t kFeatureDim = 16;
}  // namespace

FederatedRun::FederatedRun(ExperimentConfig cfg)
    : cfg_([&] {
          cfg.validate();
          return std::move(cfg);
      }()),
      quorum_(cfg_.strategy.quorum()),
      sim_(cfg_.master_seed),
      net_(sim_, cfg_.link, cfg_.strategy.num_clients),
      data_(make_dataset(cfg_.dataset_seed, cfg_.strategy.num_clients, 2000, kFeatureDim)),
      server_(sim_, net_, kServerEndpoint, cfg_.tcp),
      global_(ModelParams::zeros(kFeatureDim)) {
    if (cfg_.strategy.payload_bytes < wire::encoded_size(kFeatureDim + 1))
        throw ConfigError("/strategy/payload_bytes",
                          "must be at least the serialized model size (" +
                              std::to_string(wire::encoded_size(kFeatureDim + 1)) + " bytes)");
    const auto n = cfg_.strategy.num_clients;
    clients_.resize(n);
    net_.attach(kServerEndpoint, [this](const Packet& p) { server_.on_packet(p); });
    for (std::uint32_t i = 0; i < n; ++i) {
        Client& c = clients_[i];
        c.id = i + 1;
        c.shard = &data_.shards[i];
        const EndpointId ep{c.id};
        c.stack = std::make_unique<TcpStack>(sim_, net_, ep, cfg_.tcp);
        net_.attach(ep, [this, i](const Packet& p) { clients_[i].stack->on_packet(p); });
    }
}

FederatedRun::~FederatedRun() = default;

const std::vector<ChaosLogEntry>& FederatedRun::chaos_log() const {
    static const std::vector<ChaosLogEntry> kEmpty;
    return chaos_ ? chaos_->log() : kEmpty;
}

std::uint64_t FederatedRun::packets_from_dead() const {
    std::uint64_t n = 0;
    for (const auto& [id, mark] : kill_marks_) n += net_.stats(EndpointId{id}, Direction::Uplink).transmitted - mark;
    return n;
}

RunResult FederatedRun::execute() {
    if (executed_) throw std::logic_error("FederatedRun::execute called twice");
    executed_ = true;

    server_.listen([this](TcpConnection& conn) { server_accept(conn); });
    chaos_ = std::make_unique<ChaosController>(cfg_.chaos, static_cast<ChaosTarget&>(*this));
    chaos_->install();

    initial_unresolved_ = static_cast<std::uint32_t>(clients_.size());
    for (auto& c : clients_) client_connect(c);

    sim_.run_until(FlagSet{kDoneFlag});
    if (!sim_.flag(kDoneFlag)) throw std::logic_error("event queue drained before training finished");

    result_.config_digest = config_digest(cfg_);
    result_.master_seed = cfg_.master_seed;
    result_.total_time = sim_.now();
    result_.rounds_completed = static_cast<std::uint32_t>(
        std::count_if(result_.rounds.begin(), result_.rounds.end(),
                      [](const RoundRecord& r) { return r.status == RoundStatus::Completed; }));
    result_.final_accuracy = accuracy(global_, data_.test);
    result_.transport = server_.counters();
    for (const auto& c : clients_) result_.transport += c.stack->counters();
    const auto totals = net_.total();
    result_.bytes_sent = totals.bytes_transmitted;
    result_.bytes_delivered = totals.bytes_delivered;
    return result_;
}

// ---------------------------------------------------------------------------
// client side

bool FederatedRun::client_alive(std::uint32_t id) const { return clients_.at(id - 1).alive; }

std::size_t FederatedRun::alive_count() const {
    return static_cast<std::size_t>(std::count_if(clients_.begin(), clients_.end(), [](const Client& c) { return c.alive; }));
}

void FederatedRun::kill_client(std::uint32_t id) {
    Client& c = clients_.at(id - 1);
    if (!c.alive) return;
    c.alive = false;
    kill_marks_[id] = net_.stats(EndpointId{id}, Direction::Uplink).transmitted;
    sim_.cancel(c.compute_timer);
    sim_.cancel(c.reconnect_timer);
    c.stack->silence();
    net_.set_endpoint_down(EndpointId{id});
    c.conn = nullptr;
}

void FederatedRun::client_connect(Client& c) {
    c.reconnect_timer = {};
    if (!c.alive || phase_ == Phase::Done) return;
    auto holder = std::make_shared<TcpConnection*>(nullptr);
    TcpConnection::Callbacks cb;
    cb.on_established = [this, &c, holder] { client_established(c, **holder); };
    cb.on_connect_failed = [this, &c, holder](ConnectFailure) { client_lost(c, **holder, true); };
    cb.on_abort = [this, &c, holder](AbortKind) { client_lost(c, **holder, false); };
    cb.on_message = [this, &c, holder](std::vector<std::uint8_t> bytes) {
        client_message(c, **holder, std::move(bytes));
    };
    TcpConnection& conn = c.stack->connect(kServerEndpoint, std::move(cb));
    *holder = &conn;
    c.conn = &conn;
}

void FederatedRun::client_established(Client& c, TcpConnection& conn) {
    if (c.conn != &conn || !c.alive) return;
    wire::Message join;
    join.type = wire::Type::Join;
    join.client = c.id;
    conn.send(wire::encode(join));
}

void FederatedRun::client_lost(Client& c, TcpConnection& conn, bool connect_failure) {
    if (c.conn != &conn) return;
    c.conn = nullptr;
    sim_.cancel(c.compute_timer);
    if (connect_failure) ++result_.connect_failures;
    resolve_initial(c);
    if (c.alive && phase_ != Phase::Done)
        c.reconnect_timer = sim_.schedule_after(kReconnectDelay, EndpointId{c.id}, [this, &c] { client_connect(c); });
}

void FederatedRun::client_message(Client& c, TcpConnection& conn, std::vector<std::uint8_t> bytes) {
    if (!c.alive || c.conn != &conn) return;
    const auto msg = wire::decode(bytes);
    if (msg.type != wire::Type::FitIns) throw std::logic_error("client received an unexpected message type");

    // A new instruction supersedes any fit still running for an older round.
    sim_.cancel(c.compute_timer);
    if (!c.alive) throw ClientDead(c.id);
    const ModelParams global{msg.params};
    auto update = local_fit(*c.shard, global, cfg_.strategy.local_epochs);
    wire::Message res;
    res.type = wire::Type::FitRes;
    res.round = msg.round;
    res.client = c.id;
    res.n_samples = update.n_samples;
    res.params = std::move(update.params.weights);
    const SimTime compute = cfg_.strategy.base_compute * cfg_.strategy.local_epochs;
    c.compute_timer = sim_.schedule_after(compute, EndpointId{c.id}, [this, &c, conn_ptr = &conn, res] {
        c.compute_timer = {};
        if (!c.alive || c.conn != conn_ptr || conn_ptr->state() != ConnState::Established) return;
        conn_ptr->send(wire::encode(res, cfg_.strategy.payload_bytes));
    });
}

void FederatedRun::resolve_initial(Client& c) {
    if (c.initial_resolved) return;
    c.initial_resolved = true;
    if (--initial_unresolved_ > 0 || phase_ != Phase::Connecting) return;
    if (connected_count() < quorum_) {
        finish(FailureKind::ConnectTimeout);
        return;
    }
    start_round();
}

// ---------------------------------------------------------------------------
// server side

void FederatedRun::server_accept(TcpConnection& conn) {
    TcpConnection::Callbacks cb;
    cb.on_message = [this, &conn](std::vector<std::uint8_t> bytes) { server_message(conn, std::move(bytes)); };
    cb.on_abort = [this, &conn](AbortKind) { server_abort(conn); };
    conn.set_callbacks(std::move(cb));
}

std::size_t FederatedRun::connected_count() const {
    return static_cast<std::size_t>(std::count_if(server_conns_.begin(), server_conns_.end(), [](const auto& kv) {
        return kv.second->state() == ConnState::Established;
    }));
}

void FederatedRun::server_message(TcpConnection& conn, std::vector<std::uint8_t> bytes) {
    const auto msg = wire::decode(bytes);
    if (msg.type == wire::Type::Join) {
        const auto id = msg.client;
        if (id < 1 || id > clients_.size()) throw std::logic_error("join from an unknown client id");
        conn_owner_[&conn] = id;
        auto it = server_conns_.find(id);
        TcpConnection* old = it == server_conns_.end() ? nullptr : it->second;
        server_conns_[id] = &conn;
        if (old && old != &conn) old->abandon();
        resolve_initial(clients_[id - 1]);
        if (phase_ == Phase::WaitingQuorum && connected_count() >= quorum_) begin_round();
        return;
    }
    if (msg.type != wire::Type::FitRes) throw std::logic_error("server received an unexpected message type");
    const auto owner = conn_owner_.find(&conn);
    if (owner == conn_owner_.end()) return;
    const auto id = owner->second;
    if (phase_ != Phase::InRound || msg.round != round_.round_index || !pending_.count(id) ||
        round_conns_[id] != &conn)
        return;
    received_[id] = WeightedUpdate{ModelParams{msg.params}, msg.n_samples};
    pending_.erase(id);
    if (pending_.empty()) close_round(false);
}

void FederatedRun::server_abort(TcpConnection& conn) {
    const auto owner = conn_owner_.find(&conn);
    if (owner == conn_owner_.end()) return;
    const auto id = owner->second;
    if (auto it = server_conns_.find(id); it != server_conns_.end() && it->second == &conn) server_conns_.erase(it);
    if (phase_ == Phase::InRound && pending_.count(id) && round_conns_[id] == &conn) {
        pending_.erase(id);
        aborted_.insert(id);
        if (pending_.empty()) close_round(false);
    }
}

void FederatedRun::start_round() {
    if (phase_ == Phase::Done) return;
    round_ = RoundRecord{};
    round_.round_index = static_cast<std::uint32_t>(result_.rounds.size() + 1);
    round_.started_at = sim_.now();
    up_mark_ = net_.total(Direction::Uplink).data_bytes_transmitted;
    down_mark_ = net_.total(Direction::Downlink).data_bytes_transmitted;
    if (connected_count() >= quorum_) {
        begin_round();
        return;
    }
    phase_ = Phase::WaitingQuorum;
    round_timer_ = sim_.schedule_after(cfg_.strategy.round_deadline, kServerEndpoint, [this] { on_round_deadline(); });
}

void FederatedRun::begin_round() {
    sim_.cancel(round_timer_);
    phase_ = Phase::InRound;
    pending_.clear();
    received_.clear();
    aborted_.clear();
    round_conns_.clear();

    wire::Message ins;
    ins.type = wire::Type::FitIns;
    ins.round = round_.round_index;
    ins.params = global_.weights;
    const auto bytes = wire::encode(ins, cfg_.strategy.payload_bytes);
    for (const auto& [id, conn] : server_conns_) {
        if (conn->state() != ConnState::Established) continue;
        round_.participants.push_back(id);
        round_conns_[id] = conn;
        pending_.insert(id);
    }
    for (const auto& [id, conn] : round_conns_) conn->send(bytes);
    round_timer_ = sim_.schedule_after(cfg_.strategy.round_deadline, kServerEndpoint, [this] { on_round_deadline(); });
}

void FederatedRun::on_round_deadline() {
    round_timer_ = {};
    if (phase_ == Phase::WaitingQuorum) {
        round_.status = RoundStatus::InsufficientClients;
        close_round(true);
    } else if (phase_ == Phase::InRound) {
        close_round(true);
    }
}

bool FederatedRun::buffer_stalled(std::uint32_t id) const {
    const auto it = round_conns_.find(id);
    if (it != round_conns_.end()) {
        const auto* s = it->second;
        if (s->receive_buffer_exhausted() || s->counters().segments_dropped_buffer_full > 0) return true;
    }
    const auto* cc = clients_[id - 1].conn;
    return cc && (cc->receive_buffer_exhausted() || cc->counters().segments_dropped_buffer_full > 0);
}

void FederatedRun::close_round(bool deadline) {
    sim_.cancel(round_timer_);
    const bool waited_out = phase_ == Phase::WaitingQuorum;
    round_.ended_at = sim_.now();
    round_.updates_received = static_cast<std::uint32_t>(received_.size());
    for (auto id : round_.participants)
        if (!received_.count(id)) round_.excluded_by_deadline.push_back(id);
    round_.aborted.assign(aborted_.begin(), aborted_.end());
    round_.uplink_bytes = net_.total(Direction::Uplink).data_bytes_transmitted - up_mark_;
    round_.downlink_bytes = net_.total(Direction::Downlink).data_bytes_transmitted - down_mark_;
    if (deadline) {
        for (auto id : pending_)
            if (buffer_stalled(id)) round_.buffer_stalled = true;
    }

    if (!waited_out && received_.size() >= quorum_ && !received_.empty()) {
        std::vector<WeightedUpdate> updates;
        updates.reserve(received_.size());
        for (auto& [id, u] : received_) updates.push_back(std::move(u));  // ascending client id
        global_ = aggregate_fedavg(updates);
        round_.status = RoundStatus::Completed;
        consecutive_failures_ = 0;
    } else {
        if (!waited_out) {
            round_.status = !round_.participants.empty() && aborted_.size() == round_.participants.size()
                                ? RoundStatus::TransportAbort
                                : RoundStatus::DeadlineNoQuorum;
        }
        ++consecutive_failures_;
    }
    round_.eval_accuracy = accuracy(global_, data_.test);
    result_.rounds.push_back(round_);
    pending_.clear();
    received_.clear();
    aborted_.clear();
    round_conns_.clear();
    phase_ = Phase::Idle;

    const auto completed = std::count_if(result_.rounds.begin(), result_.rounds.end(),
                                         [](const RoundRecord& r) { return r.status == RoundStatus::Completed; });
    chaos_->on_round_closed(round_.round_index);
    if (static_cast<std::uint32_t>(completed) >= cfg_.strategy.num_rounds) {
        finish(FailureKind::None);
    } else if (consecutive_failures_ >= 2) {
        finish(diagnose());
    } else {
        sim_.schedule(sim_.now(), kServerEndpoint, [this] { start_round(); });
    }
}

FailureKind FederatedRun::diagnose() const {
    if (alive_count() < quorum_) return FailureKind::InsufficientClients;
    const auto& last = result_.rounds.back();
    switch (last.status) {
        case RoundStatus::TransportAbort: return FailureKind::RetriesExceeded;
        case RoundStatus::InsufficientClients: return FailureKind::DeadlineNoQuorum;
        case RoundStatus::DeadlineNoQuorum:
            return last.buffer_stalled ? FailureKind::BufferStall : FailureKind::DeadlineNoQuorum;
        case RoundStatus::Completed: break;
    }
    return FailureKind::None;
}

void FederatedRun::finish(FailureKind kind) {
    if (phase_ == Phase::Done) return;
    phase_ = Phase::Done;
    sim_.cancel(round_timer_);
    result_.failure_kind = kind;
    sim_.set_flag(kDoneFlag);
}

RunResult run_training(const ExperimentConfig& cfg) { return FederatedRun(cfg).execute(); }

}  // namespace flsim
