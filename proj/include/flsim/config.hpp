#pragma once

#include "flsim/chaos.hpp"
#include "flsim/fl_types.hpp"
#include "flsim/metrics.hpp"
#include "flsim/net_link.hpp"
#include "flsim/tcp.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace flsim {

/// Bad configuration input. `where` is "line N" for syntax errors or a JSON
/// pointer such as "/strategy/num_clients" for schema errors.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string where, const std::string& message);
    const std::string& where() const noexcept { return where_; }

private:
    std::string where_;
};

struct SweepSpec {
    SweepAxis axis = SweepAxis::DelayS;
    std::vector<double> values;
    /// Seeds per value; the median run is reported. Defaults: 5 on the loss
    /// axis, 1 elsewhere.
    std::optional<std::uint32_t> seeds;

    friend bool operator==(const SweepSpec&, const SweepSpec&) = default;
};

struct TcpGridSpec {
    std::string param;
    std::vector<double> values;
    /// One-way delays; defaults to 17 evenly spaced points over [0, 0.8].
    std::vector<double> latencies;

    friend bool operator==(const TcpGridSpec&, const TcpGridSpec&) = default;
};

std::vector<double> default_grid_latencies();

struct ExperimentConfig {
    std::uint64_t master_seed = 1;
    /// Seeds the synthetic dataset; kept apart from master_seed so seed
    /// sweeps vary only the network and chaos randomness.
    std::uint64_t dataset_seed = 1;
    StrategyConfig strategy;
    LinkConfig link;
    TcpParams tcp;
    ChaosSchedule chaos;
    std::optional<SweepSpec> sweep;
    std::optional<TcpGridSpec> tcp_grid;

    /// Throws ConfigError.
    void validate() const;

    friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);

nlohmann::json to_json(const ExperimentConfig& cfg);
std::string canonical_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical JSON, as 16 hex digits.
std::string config_digest(const ExperimentConfig& cfg);

/// Sets a TcpParams field by its name or its sysctl alias (tcp_ prefix).
/// Throws ConfigError for unknown names or values the field cannot hold.
void set_tcp_param(TcpParams& params, std::string_view name, double value);
double get_tcp_param(const TcpParams& params, std::string_view name);

}  // namespace flsim
