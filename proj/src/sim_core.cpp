#include "flsim/sim_core.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace flsim {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

std::string describe_past(SimTime fire_at, SimTime now) {
    std::ostringstream os;
    os << "cannot schedule at t=" << fire_at << " while clock is at t=" << now;
    return os.str();
}

}  // namespace

SchedulingInPast::SchedulingInPast(SimTime fire_at, SimTime now)
    : std::logic_error(describe_past(fire_at, now)) {}

LivelockGuard::LivelockGuard(std::uint64_t limit)
    : std::runtime_error("event limit of " + std::to_string(limit) + " dispatches exceeded") {}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) noexcept {
    std::uint64_t h = basis;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// xoshiro256** seeded through splitmix64 from (master_seed, label).
RngStream::RngStream(std::uint64_t master_seed, std::string_view label) : label_(label) {
    std::uint64_t x = master_seed ^ fnv1a64(label);
    for (auto& s : state_) s = splitmix64(x);
}

std::uint64_t RngStream::next_u64() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double RngStream::uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

bool RngStream::bernoulli(double p) {
    if (p <= 0.0) return false;
    if (p >= 1.0) return true;
    return uniform01() < p;
}

std::uint64_t RngStream::below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::below requires n > 0");
    // Lemire-style rejection keeps the draw unbiased.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
        const std::uint64_t r = next_u64();
        if (r >= threshold) return r % n;
    }
}

std::vector<std::size_t> RngStream::shuffle(std::size_t n) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(below(i));
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

double RngStream::normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Simulator::Simulator(std::uint64_t master_seed, std::uint64_t max_events)
    : master_seed_(master_seed), max_events_(max_events) {}

EventHandle Simulator::schedule(SimTime fire_at, EndpointId target, Action action) {
    if (fire_at < now_) throw SchedulingInPast(fire_at, now_);
    const EventHandle handle{fire_at, next_seq_++};
    queue_.emplace(Key{fire_at, handle.seq}, Entry{target, std::move(action)});
    return handle;
}

bool Simulator::cancel(EventHandle& handle) {
    if (!handle.valid()) return false;
    const bool erased = queue_.erase(Key{handle.fire_at, handle.seq}) != 0;
    handle = EventHandle{};
    return erased;
}

bool Simulator::pending(const EventHandle& handle) const {
    return handle.valid() && queue_.count(Key{handle.fire_at, handle.seq}) != 0;
}

bool Simulator::stop_holds(const StopCondition& stop) const {
    return std::visit(
        [this](const auto& s) -> bool {
            using T = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<T, QueueEmpty>) {
                return queue_.empty();
            } else if constexpr (std::is_same_v<T, ClockAtLeast>) {
                return now_ >= s.time;
            } else {
                return flag(s.name);
            }
        },
        stop);
}

SimTime Simulator::run_until(const StopCondition& stop) {
    const auto* horizon = std::get_if<ClockAtLeast>(&stop);
    while (!stop_holds(stop)) {
        if (queue_.empty()) break;
        auto it = queue_.begin();
        if (horizon && it->first.first >= horizon->time) {
            now_ = horizon->time;
            break;
        }
        if (dispatched_ >= max_events_) throw LivelockGuard(max_events_);
        now_ = it->first.first;
        Entry entry = std::move(it->second);
        queue_.erase(it);
        ++dispatched_;
        if (trace_) trace_(now_, entry.target);
        entry.action();
    }
    if (horizon && now_ < horizon->time && queue_.empty()) now_ = horizon->time;
    return now_;
}

RngStream& Simulator::stream(std::string_view label) {
    auto key = std::string(label);
    auto it = streams_.find(key);
    if (it == streams_.end()) {
        it = streams_.emplace(key, std::make_unique<RngStream>(master_seed_, label)).first;
    }
    return *it->second;
}

}  // namespace flsim
