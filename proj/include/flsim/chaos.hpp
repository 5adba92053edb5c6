#pragma once

#include "flsim/net_link.hpp"
#include "flsim/sim_core.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace flsim {

class ScheduleInvalid : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Kill a fraction of all clients, or an explicit id set. Kills are silent
/// and permanent.
struct KillClients {
    std::optional<double> fraction;
    std::vector<std::uint32_t> ids;

    friend bool operator==(const KillClients&, const KillClients&) = default;
};

/// Drop every packet in both directions for `duration` seconds.
struct Blackhole {
    SimTime duration = 0.0;

    friend bool operator==(const Blackhole&, const Blackhole&) = default;
};

struct SetLink {
    LinkConfig link;

    friend bool operator==(const SetLink&, const SetLink&) = default;
};

using ChaosKind = std::variant<KillClients, Blackhole, SetLink>;

/// An action fires at absolute time `at`, or, when `after_round` is set,
/// `at` seconds after that round closes.
struct ChaosAction {
    SimTime at = 0.0;
    std::optional<std::uint32_t> after_round;
    ChaosKind kind;

    friend bool operator==(const ChaosAction&, const ChaosAction&) = default;
};

struct ChaosSchedule {
    std::vector<ChaosAction> actions;
    std::string seed_label = "chaos.kill";

    /// Throws ScheduleInvalid. Absolute actions must be sorted by `at`.
    void validate(std::size_t num_clients) const;
    bool empty() const noexcept { return actions.empty(); }

    friend bool operator==(const ChaosSchedule&, const ChaosSchedule&) = default;
};

/// round(f * n) with halves rounded up.
std::size_t kill_count(double fraction, std::size_t n);

/// What chaos needs from a running experiment.
class ChaosTarget {
public:
    virtual ~ChaosTarget() = default;
    virtual Simulator& simulator() = 0;
    virtual Network& network() = 0;
    virtual std::size_t num_clients() const = 0;
    virtual bool client_alive(std::uint32_t id) const = 0;
    virtual void kill_client(std::uint32_t id) = 0;
};

struct ChaosLogEntry {
    SimTime at = 0.0;
    std::string what;
    std::vector<std::uint32_t> killed;
};

class ChaosController {
public:
    ChaosController(ChaosSchedule schedule, ChaosTarget& target);

    /// Installs absolute-time actions. Call before the run starts.
    void install();
    /// Installs actions keyed to `round_index`.
    void on_round_closed(std::uint32_t round_index);

    const std::vector<ChaosLogEntry>& log() const noexcept { return log_; }

private:
    void fire(const ChaosAction& action);

    ChaosSchedule schedule_;
    ChaosTarget& target_;
    RngStream* kill_rng_ = nullptr;
    std::vector<ChaosLogEntry> log_;
};

}  // namespace flsim
