#include "flsim/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <set>
#include <sstream>

namespace flsim {

using nlohmann::json;

ConfigError::ConfigError(std::string where, const std::string& message)
    : std::invalid_argument(where.empty() ? message : where + ": " + message), where_(std::move(where)) {}

std::vector<double> default_grid_latencies() {
    std::vector<double> out;
    for (int i = 0; i <= 16; ++i) out.push_back(0.05 * i);
    return out;
}

// ---------------------------------------------------------------------------
// TcpParams field table

namespace {

enum class FieldType { Count, Bytes, Seconds, Bool };

struct TcpField {
    const char* name;
    const char* alias;
    FieldType type;
    std::function<double(const TcpParams&)> get;
    std::function<void(TcpParams&, double)> set;
};

template <typename T>
T narrow_count(double v, std::string_view name) {
    if (!(v >= 0.0) || v != std::floor(v) || v > static_cast<double>(std::numeric_limits<T>::max()))
        throw ConfigError("", std::string(name) + " must be a non-negative integer");
    return static_cast<T>(v);
}

const std::vector<TcpField>& tcp_fields() {
    static const std::vector<TcpField> fields = [] {
        std::vector<TcpField> f;
        auto count = [&](const char* n, const char* a, std::uint32_t TcpParams::*m) {
            f.push_back({n, a, FieldType::Count, [m](const TcpParams& p) { return static_cast<double>(p.*m); },
                         [m, n](TcpParams& p, double v) { p.*m = narrow_count<std::uint32_t>(v, n); }});
        };
        auto bytes = [&](const char* n, const char* a, std::uint64_t TcpParams::*m) {
            f.push_back({n, a, FieldType::Bytes, [m](const TcpParams& p) { return static_cast<double>(p.*m); },
                         [m, n](TcpParams& p, double v) { p.*m = narrow_count<std::uint64_t>(v, n); }});
        };
        auto seconds = [&](const char* n, const char* a, SimTime TcpParams::*m) {
            f.push_back({n, a, FieldType::Seconds, [m](const TcpParams& p) { return p.*m; },
                         [m](TcpParams& p, double v) { p.*m = v; }});
        };
        auto flag = [&](const char* n, const char* a, bool TcpParams::*m) {
            f.push_back({n, a, FieldType::Bool, [m](const TcpParams& p) { return p.*m ? 1.0 : 0.0; },
                         [m, n](TcpParams& p, double v) {
                             if (v != 0.0 && v != 1.0) throw ConfigError("", std::string(n) + " must be 0 or 1");
                             p.*m = v != 0.0;
                         }});
        };
        count("syn_retries", "tcp_syn_retries", &TcpParams::syn_retries);
        count("synack_retries", "tcp_synack_retries", &TcpParams::synack_retries);
        seconds("keepalive_time", "tcp_keepalive_time", &TcpParams::keepalive_time);
        seconds("keepalive_intvl", "tcp_keepalive_intvl", &TcpParams::keepalive_intvl);
        count("keepalive_probes", "tcp_keepalive_probes", &TcpParams::keepalive_probes);
        count("retries2", "tcp_retries2", &TcpParams::retries2);
        bytes("rmem_bytes", "tcp_rmem", &TcpParams::rmem_bytes);
        bytes("wmem_bytes", "tcp_wmem", &TcpParams::wmem_bytes);
        count("max_syn_backlog", "tcp_max_syn_backlog", &TcpParams::max_syn_backlog);
        flag("sack_enabled", "tcp_sack", &TcpParams::sack_enabled);
        flag("window_scaling", "tcp_window_scaling", &TcpParams::window_scaling);
        seconds("connect_deadline", "connect_deadline", &TcpParams::connect_deadline);
        seconds("initial_rto", "initial_rto", &TcpParams::initial_rto);
        return f;
    }();
    return fields;
}

const TcpField& find_tcp_field(std::string_view name) {
    for (const auto& f : tcp_fields())
        if (name == f.name || name == f.alias) return f;
    throw ConfigError("", "unknown TCP parameter '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// strict JSON reader

class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_.empty() ? "/" : path_, "expected an object");
    }

    std::string at(const std::string& key) const { return path_ + "/" + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        auto it = j_.find(key);
        return it == j_.end() ? nullptr : &*it;
    }

    void number(const std::string& key, double& out) {
        if (const json* v = find(key)) out = as_number(*v, at(key));
    }

    template <typename T>
    void count(const std::string& key, T& out) {
        if (const json* v = find(key)) out = as_count<T>(*v, at(key));
    }

    void boolean(const std::string& key, bool& out) {
        if (const json* v = find(key)) {
            if (!v->is_boolean()) throw ConfigError(at(key), "expected true or false");
            out = v->get<bool>();
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(at(it.key()), "unknown field");
    }

    static double as_number(const json& v, const std::string& where) {
        if (!v.is_number()) throw ConfigError(where, "expected a number");
        return v.get<double>();
    }

    template <typename T>
    static T as_count(const json& v, const std::string& where) {
        if (v.is_number_unsigned()) {
            const auto u = v.get<std::uint64_t>();
            if (u > std::numeric_limits<T>::max()) throw ConfigError(where, "value too large");
            return static_cast<T>(u);
        }
        throw ConfigError(where, "expected a non-negative integer");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<double> number_list(const json& v, const std::string& where) {
    if (!v.is_array()) throw ConfigError(where, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Obj::as_number(v[i], where + "/" + std::to_string(i)));
    return out;
}

// Validation messages lead with "section.field"; point at that field.
std::string field_pointer(const std::string& path, const std::string& message) {
    const auto dot = message.find('.');
    const auto end = message.find(' ');
    if (dot == std::string::npos || end == std::string::npos || dot > end) return path;
    return path + "/" + message.substr(dot + 1, end - dot - 1);
}

StrategyConfig parse_strategy(const json& j, const std::string& path) {
    StrategyConfig s;
    Obj o(j, path);
    o.count("num_clients", s.num_clients);
    o.count("num_rounds", s.num_rounds);
    o.number("min_fit_fraction", s.min_fit_fraction);
    o.number("min_eval_fraction", s.min_eval_fraction);
    o.number("round_deadline", s.round_deadline);
    o.count("local_epochs", s.local_epochs);
    o.count("payload_bytes", s.payload_bytes);
    o.number("base_compute", s.base_compute);
    o.finish();
    try {
        s.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(field_pointer(path, e.what()), e.what());
    }
    return s;
}

LinkConfig parse_link(const json& j, const std::string& path) {
    LinkConfig l;
    Obj o(j, path);
    o.number("one_way_delay", l.one_way_delay);
    o.number("loss_prob", l.loss_prob);
    o.count("queue_limit", l.queue_limit);
    if (const json* v = o.find("rate_cap")) {
        if (!v->is_null()) l.rate_cap_bps = Obj::as_number(*v, o.at("rate_cap"));
    }
    o.number("jitter", l.jitter);
    o.finish();
    try {
        l.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(field_pointer(path, e.what()), e.what());
    }
    return l;
}

TcpParams parse_tcp(const json& j, const std::string& path) {
    TcpParams p;
    Obj o(j, path);
    for (const auto& f : tcp_fields()) {
        for (const char* key : {f.name, f.alias}) {
            const json* v = o.find(key);
            if (!v) continue;
            const auto where = o.at(key);
            double value = 0.0;
            switch (f.type) {
                case FieldType::Bool:
                    if (!v->is_boolean()) throw ConfigError(where, "expected true or false");
                    value = v->get<bool>() ? 1.0 : 0.0;
                    break;
                case FieldType::Count:
                case FieldType::Bytes:
                    value = static_cast<double>(Obj::as_count<std::uint64_t>(*v, where));
                    break;
                case FieldType::Seconds:
                    // null spells "no limit" for the application deadline
                    if (v->is_null() && std::string_view(f.name) == "connect_deadline")
                        value = std::numeric_limits<double>::infinity();
                    else
                        value = Obj::as_number(*v, where);
                    break;
            }
            try {
                f.set(p, value);
            } catch (const ConfigError& e) {
                throw ConfigError(where, e.what());
            }
        }
    }
    o.finish();
    try {
        p.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(path, e.what());
    }
    return p;
}

ChaosSchedule parse_chaos(const json& j, const std::string& path, std::size_t num_clients) {
    ChaosSchedule s;
    if (j.is_object()) {
        Obj o(j, path);
        if (const json* v = o.find("seed_label")) {
            if (!v->is_string()) throw ConfigError(o.at("seed_label"), "expected a string");
            s.seed_label = v->get<std::string>();
        }
        const json* actions = o.find("actions");
        o.finish();
        if (!actions) return s;
        return [&] {
            auto inner = parse_chaos(*actions, path + "/actions", num_clients);
            inner.seed_label = s.seed_label;
            return inner;
        }();
    }
    if (!j.is_array()) throw ConfigError(path, "expected a list of actions");
    for (std::size_t i = 0; i < j.size(); ++i) {
        const std::string ap = path + "/" + std::to_string(i);
        Obj o(j[i], ap);
        ChaosAction a;
        o.number("at", a.at);
        if (const json* v = o.find("after_round")) a.after_round = Obj::as_count<std::uint32_t>(*v, o.at("after_round"));
        const json* kind = o.find("kind");
        if (!kind || !kind->is_string()) throw ConfigError(o.at("kind"), "expected KillClients, Blackhole or SetLink");
        const std::string k = kind->get<std::string>();
        static const json kEmpty = json::object();
        const json* args = o.find("args");
        const json& argv = args ? *args : kEmpty;
        const std::string argp = o.at("args");
        if (k == "KillClients") {
            KillClients kc;
            Obj ao(argv, argp);
            if (const json* v = ao.find("fraction")) kc.fraction = Obj::as_number(*v, ao.at("fraction"));
            if (const json* v = ao.find("ids")) {
                if (!v->is_array()) throw ConfigError(ao.at("ids"), "expected a list of client ids");
                for (std::size_t n = 0; n < v->size(); ++n)
                    kc.ids.push_back(Obj::as_count<std::uint32_t>((*v)[n], ao.at("ids") + "/" + std::to_string(n)));
            }
            if (const json* v = ao.find("permanent")) {
                if (!v->is_boolean() || !v->get<bool>())
                    throw ConfigError(ao.at("permanent"), "only permanent kills are supported");
            }
            ao.finish();
            a.kind = kc;
        } else if (k == "Blackhole") {
            Blackhole b;
            Obj ao(argv, argp);
            ao.number("duration", b.duration);
            if (const json* v = ao.find("direction")) {
                if (!v->is_string() || v->get<std::string>() != "both")
                    throw ConfigError(ao.at("direction"), "only \"both\" is supported");
            }
            ao.finish();
            a.kind = b;
        } else if (k == "SetLink") {
            a.kind = SetLink{parse_link(argv, argp)};
        } else {
            throw ConfigError(o.at("kind"), "unknown action kind '" + k + "'");
        }
        o.finish();
        s.actions.push_back(std::move(a));
    }
    try {
        s.validate(num_clients);
    } catch (const ScheduleInvalid& e) {
        throw ConfigError(path, e.what());
    }
    return s;
}

void parse_sweep(const json& j, const std::string& path, ExperimentConfig& cfg) {
    Obj o(j, path);
    const json* axis = o.find("axis");
    const json* values = o.find("values");
    const json* seeds = o.find("seeds");
    const json* grid = o.find("tcp_grid");
    o.finish();
    if ((axis != nullptr) == (grid != nullptr))
        throw ConfigError(path, "give exactly one of axis (with values) or tcp_grid");
    if (axis) {
        SweepSpec s;
        if (!axis->is_string()) throw ConfigError(o.at("axis"), "expected an axis name");
        try {
            s.axis = parse_axis(axis->get<std::string>());
        } catch (const UnknownAxis& e) {
            throw ConfigError(o.at("axis"), e.what());
        }
        if (!values) throw ConfigError(o.at("values"), "missing");
        s.values = number_list(*values, o.at("values"));
        if (s.values.size() < 2) throw ConfigError(o.at("values"), "a sweep needs at least two values");
        if (seeds) {
            s.seeds = Obj::as_count<std::uint32_t>(*seeds, o.at("seeds"));
            if (*s.seeds == 0) throw ConfigError(o.at("seeds"), "must be >= 1");
        }
        for (std::size_t i = 0; i < s.values.size(); ++i) {
            try {
                classify(s.axis, s.values[i]);
            } catch (const std::domain_error& e) {
                throw ConfigError(o.at("values") + "/" + std::to_string(i), e.what());
            }
        }
        cfg.sweep = std::move(s);
        return;
    }
    if (values || seeds) throw ConfigError(path, "values/seeds belong inside tcp_grid for a grid");
    const std::string gp = o.at("tcp_grid");
    Obj g(*grid, gp);
    TcpGridSpec spec;
    const json* param = g.find("param");
    if (!param || !param->is_string()) throw ConfigError(g.at("param"), "expected a TCP parameter name");
    spec.param = param->get<std::string>();
    try {
        find_tcp_field(spec.param);
    } catch (const ConfigError& e) {
        throw ConfigError(g.at("param"), e.what());
    }
    const json* gv = g.find("values");
    if (!gv) throw ConfigError(g.at("values"), "missing");
    spec.values = number_list(*gv, g.at("values"));
    if (spec.values.empty()) throw ConfigError(g.at("values"), "needs at least one value");
    if (const json* lat = g.find("latencies")) spec.latencies = number_list(*lat, g.at("latencies"));
    else spec.latencies = default_grid_latencies();
    g.finish();
    for (std::size_t i = 0; i < spec.values.size(); ++i) {
        TcpParams probe = cfg.tcp;
        try {
            set_tcp_param(probe, spec.param, spec.values[i]);
            probe.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(g.at("values") + "/" + std::to_string(i), e.what());
        }
    }
    for (std::size_t i = 0; i < spec.latencies.size(); ++i) {
        if (!(spec.latencies[i] >= 0.0))
            throw ConfigError(g.at("latencies") + "/" + std::to_string(i), "latency must be >= 0");
    }
    cfg.tcp_grid = std::move(spec);
}

std::size_t line_of_offset(std::string_view text, std::size_t offset) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

json link_json(const LinkConfig& l) {
    json j;
    j["one_way_delay"] = l.one_way_delay;
    j["loss_prob"] = l.loss_prob;
    j["queue_limit"] = l.queue_limit;
    j["rate_cap"] = l.rate_cap_bps ? json(*l.rate_cap_bps) : json(nullptr);
    j["jitter"] = l.jitter;
    return j;
}

}  // namespace

void set_tcp_param(TcpParams& params, std::string_view name, double value) { find_tcp_field(name).set(params, value); }

double get_tcp_param(const TcpParams& params, std::string_view name) { return find_tcp_field(name).get(params); }

void ExperimentConfig::validate() const {
    try {
        strategy.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("/strategy", e.what());
    }
    try {
        link.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("/link", e.what());
    }
    try {
        tcp.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError("/tcp", e.what());
    }
    try {
        chaos.validate(strategy.num_clients);
    } catch (const ScheduleInvalid& e) {
        throw ConfigError("/chaos", e.what());
    }
    if (sweep && tcp_grid) throw ConfigError("/sweep", "a config is either a sweep or a grid, not both");
}

ExperimentConfig parse_config(std::string_view text) {
    json root;
    try {
        root = json::parse(text.begin(), text.end());
    } catch (const json::parse_error& e) {
        throw ConfigError("line " + std::to_string(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)),
                          "malformed JSON");
    }
    ExperimentConfig cfg;
    Obj o(root, "");
    if (const json* v = o.find("master_seed")) cfg.master_seed = Obj::as_count<std::uint64_t>(*v, "/master_seed");
    if (const json* v = o.find("dataset_seed")) cfg.dataset_seed = Obj::as_count<std::uint64_t>(*v, "/dataset_seed");
    if (const json* v = o.find("strategy")) cfg.strategy = parse_strategy(*v, "/strategy");
    if (const json* v = o.find("link")) cfg.link = parse_link(*v, "/link");
    if (const json* v = o.find("tcp")) cfg.tcp = parse_tcp(*v, "/tcp");
    if (const json* v = o.find("chaos")) cfg.chaos = parse_chaos(*v, "/chaos", cfg.strategy.num_clients);
    if (const json* v = o.find("sweep")) parse_sweep(*v, "/sweep", cfg);
    o.finish();
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ConfigError(path.string(), "cannot open config file");
    std::ostringstream buf;
    buf << f.rdbuf();
    return parse_config(buf.str());
}

json to_json(const ExperimentConfig& cfg) {
    json j;
    j["master_seed"] = cfg.master_seed;
    j["dataset_seed"] = cfg.dataset_seed;

    const auto& s = cfg.strategy;
    j["strategy"] = {{"num_clients", s.num_clients},
                     {"num_rounds", s.num_rounds},
                     {"min_fit_fraction", s.min_fit_fraction},
                     {"min_eval_fraction", s.min_eval_fraction},
                     {"round_deadline", s.round_deadline},
                     {"local_epochs", s.local_epochs},
                     {"payload_bytes", s.payload_bytes},
                     {"base_compute", s.base_compute}};
    j["link"] = link_json(cfg.link);

    json tcp = json::object();
    for (const auto& f : tcp_fields()) {
        const double v = f.get(cfg.tcp);
        switch (f.type) {
            case FieldType::Bool: tcp[f.name] = v != 0.0; break;
            case FieldType::Count:
            case FieldType::Bytes: tcp[f.name] = static_cast<std::uint64_t>(v); break;
            case FieldType::Seconds: tcp[f.name] = std::isfinite(v) ? json(v) : json(nullptr); break;
        }
    }
    j["tcp"] = tcp;

    json actions = json::array();
    for (const auto& a : cfg.chaos.actions) {
        json ja;
        ja["at"] = a.at;
        if (a.after_round) ja["after_round"] = *a.after_round;
        if (const auto* k = std::get_if<KillClients>(&a.kind)) {
            ja["kind"] = "KillClients";
            json args = json::object();
            if (k->fraction) args["fraction"] = *k->fraction;
            else args["ids"] = k->ids;
            ja["args"] = args;
        } else if (const auto* b = std::get_if<Blackhole>(&a.kind)) {
            ja["kind"] = "Blackhole";
            ja["args"] = {{"duration", b->duration}};
        } else if (const auto* sl = std::get_if<SetLink>(&a.kind)) {
            ja["kind"] = "SetLink";
            ja["args"] = link_json(sl->link);
        }
        actions.push_back(ja);
    }
    j["chaos"] = {{"seed_label", cfg.chaos.seed_label}, {"actions", actions}};

    if (cfg.sweep) {
        json sw = {{"axis", std::string(to_string(cfg.sweep->axis))}, {"values", cfg.sweep->values}};
        if (cfg.sweep->seeds) sw["seeds"] = *cfg.sweep->seeds;
        j["sweep"] = sw;
    } else if (cfg.tcp_grid) {
        j["sweep"] = {{"tcp_grid",
                       {{"param", cfg.tcp_grid->param},
                        {"values", cfg.tcp_grid->values},
                        {"latencies", cfg.tcp_grid->latencies}}}};
    }
    return j;
}

std::string canonical_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(); }

std::string config_digest(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_json(cfg))));
    return buf;
}

}  // namespace flsim
