#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace flsim {

/// Simulated seconds since the start of a run.
using SimTime = double;

inline constexpr SimTime kForever = 1e300;

/// Identifies a network endpoint. The server is always 0, clients are 1..N.
enum class EndpointId : std::uint32_t {};

inline constexpr EndpointId kServerEndpoint{0};

constexpr std::uint32_t to_index(EndpointId id) noexcept { return static_cast<std::uint32_t>(id); }

class SchedulingInPast : public std::logic_error {
public:
    SchedulingInPast(SimTime fire_at, SimTime now);
};

class LivelockGuard : public std::runtime_error {
public:
    explicit LivelockGuard(std::uint64_t limit);
};

struct EventHandle {
    SimTime fire_at = 0.0;
    std::uint64_t seq = 0;

    bool valid() const noexcept { return seq != 0; }
};

/// Deterministic generator bound to a (master seed, label) pair. Draws are
/// implemented on top of the raw 64-bit engine output so sequences are the
/// same across standard library implementations.
class RngStream {
public:
    RngStream(std::uint64_t master_seed, std::string_view label);

    const std::string& label() const noexcept { return label_; }

    std::uint64_t next_u64();
    /// Uniform on [0, 1) with 53 bits of precision.
    double uniform01();
    bool bernoulli(double p);
    /// Uniform integer on [0, n). n must be positive.
    std::uint64_t below(std::uint64_t n);
    /// Uniformly random permutation of 0..n-1 (Fisher-Yates).
    std::vector<std::size_t> shuffle(std::size_t n);
    /// Standard normal draw (Box-Muller, one value per call).
    double normal();

private:
    std::string label_;
    std::uint64_t state_[4];
};

/// 64-bit FNV-1a; used to derive stream seeds and config digests.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

struct QueueEmpty {};
struct ClockAtLeast {
    SimTime time;
};
struct FlagSet {
    std::string name;
};
using StopCondition = std::variant<QueueEmpty, ClockAtLeast, FlagSet>;

/// Single-threaded discrete-event engine. Events with equal fire times are
/// dispatched in scheduling order.
class Simulator {
public:
    using Action = std::function<void()>;

    static constexpr std::uint64_t kDefaultMaxEvents = 100'000'000;

    explicit Simulator(std::uint64_t master_seed, std::uint64_t max_events = kDefaultMaxEvents);

    Simulator(const Simulator&) = delete;
    Simulator& operator=(const Simulator&) = delete;

    SimTime now() const noexcept { return now_; }
    std::uint64_t master_seed() const noexcept { return master_seed_; }

    EventHandle schedule(SimTime fire_at, EndpointId target, Action action);
    EventHandle schedule_after(SimTime delay, EndpointId target, Action action) {
        return schedule(now_ + delay, target, std::move(action));
    }
    bool cancel(EventHandle& handle);
    bool pending(const EventHandle& handle) const;

    SimTime run_until(const StopCondition& stop);

    void set_flag(const std::string& name) { flags_.insert(name); }
    bool flag(const std::string& name) const { return flags_.count(name) != 0; }

    /// Returns the stream for `label`, creating it on first use.
    RngStream& stream(std::string_view label);

    std::uint64_t dispatched() const noexcept { return dispatched_; }
    std::size_t queued() const noexcept { return queue_.size(); }

    /// Optional observer called before each dispatch with (fire_at, target).
    void set_trace(std::function<void(SimTime, EndpointId)> trace) { trace_ = std::move(trace); }

private:
    struct Entry {
        EndpointId target;
        Action action;
    };
    using Key = std::pair<SimTime, std::uint64_t>;

    bool stop_holds(const StopCondition& stop) const;

    std::uint64_t master_seed_;
    std::uint64_t max_events_;
    SimTime now_ = 0.0;
    std::uint64_t next_seq_ = 1;
    std::uint64_t dispatched_ = 0;
    std::map<Key, Entry> queue_;
    std::set<std::string> flags_;
    std::unordered_map<std::string, std::unique_ptr<RngStream>> streams_;
    std::function<void(SimTime, EndpointId)> trace_;
};

}  // namespace flsim
