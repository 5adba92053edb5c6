#include "flsim/chaos.hpp"

#include <algorithm>
#include <cmath>

namespace flsim {

std::size_t kill_count(double fraction, std::size_t n) {
    // The small epsilon keeps exact halves such as 0.95 * 10 from rounding
    // down through representation error.
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5 + 1e-9));
}

void ChaosSchedule::validate(std::size_t num_clients) const {
    SimTime last_absolute = 0.0;
    for (std::size_t i = 0; i < actions.size(); ++i) {
        const auto& a = actions[i];
        const std::string where = "chaos[" + std::to_string(i) + "]";
        if (!(a.at >= 0.0) || !std::isfinite(a.at)) throw ScheduleInvalid(where + ".at must be a finite time >= 0");
        if (!a.after_round) {
            if (a.at < last_absolute) throw ScheduleInvalid(where + ": absolute actions must be sorted by time");
            last_absolute = a.at;
        }
        if (const auto* k = std::get_if<KillClients>(&a.kind)) {
            if (k->fraction.has_value() == !k->ids.empty())
                throw ScheduleInvalid(where + ": KillClients takes exactly one of fraction or ids");
            if (k->fraction && !(*k->fraction >= 0.0 && *k->fraction <= 1.0))
                throw ScheduleInvalid(where + ": kill fraction must lie in [0, 1]");
            for (auto id : k->ids)
                if (id < 1 || id > num_clients)
                    throw ScheduleInvalid(where + ": client id " + std::to_string(id) + " out of range");
        } else if (const auto* b = std::get_if<Blackhole>(&a.kind)) {
            if (!(b->duration > 0.0) || !std::isfinite(b->duration))
                throw ScheduleInvalid(where + ": blackhole duration must be > 0");
        } else if (const auto* s = std::get_if<SetLink>(&a.kind)) {
            try {
                s->link.validate();
            } catch (const std::invalid_argument& e) {
                throw ScheduleInvalid(where + ": " + e.what());
            }
        }
    }
}

ChaosController::ChaosController(ChaosSchedule schedule, ChaosTarget& target)
    : schedule_(std::move(schedule)), target_(target) {
    schedule_.validate(target_.num_clients());
}

void ChaosController::install() {
    auto& sim = target_.simulator();
    for (const auto& a : schedule_.actions) {
        if (a.after_round) continue;
        sim.schedule(std::max(a.at, sim.now()), kServerEndpoint, [this, a] { fire(a); });
    }
}

void ChaosController::on_round_closed(std::uint32_t round_index) {
    auto& sim = target_.simulator();
    for (const auto& a : schedule_.actions) {
        if (a.after_round != round_index) continue;
        sim.schedule(sim.now() + a.at, kServerEndpoint, [this, a] { fire(a); });
    }
}

void ChaosController::fire(const ChaosAction& action) {
    auto& sim = target_.simulator();
    ChaosLogEntry entry{sim.now(), {}, {}};
    if (const auto* k = std::get_if<KillClients>(&action.kind)) {
        std::vector<std::uint32_t> victims;
        if (k->fraction) {
            const std::size_t n = target_.num_clients();
            const std::size_t want = kill_count(*k->fraction, n);
            if (want > 0) {
                if (!kill_rng_) kill_rng_ = &sim.stream(schedule_.seed_label);
                for (auto i : kill_rng_->shuffle(n)) {
                    if (victims.size() == want) break;
                    const auto id = static_cast<std::uint32_t>(i + 1);
                    if (target_.client_alive(id)) victims.push_back(id);
                }
            }
        } else {
            for (auto id : k->ids)
                if (target_.client_alive(id)) victims.push_back(id);
        }
        std::sort(victims.begin(), victims.end());
        for (auto id : victims) target_.kill_client(id);
        entry.what = "kill";
        entry.killed = std::move(victims);
    } else if (const auto* b = std::get_if<Blackhole>(&action.kind)) {
        target_.network().blackhole(sim.now(), sim.now() + b->duration);
        entry.what = "blackhole";
    } else if (const auto* s = std::get_if<SetLink>(&action.kind)) {
        target_.network().set_link_params(sim.now(), s->link);
        entry.what = "set_link";
    }
    log_.push_back(std::move(entry));
}

}  // namespace flsim
