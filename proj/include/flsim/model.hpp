#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace flsim {

/// Dense binary-classification data, row-major.
struct Dataset {
    std::size_t dim = 0;
    std::vector<double> features;
    std::vector<std::uint8_t> labels;

    std::size_t size() const noexcept { return labels.size(); }
    std::span<const double> row(std::size_t i) const { return {features.data() + i * dim, dim}; }
    void push(std::span<const double> x, std::uint8_t y);
};

struct FederatedData {
    Dataset train;
    Dataset test;
    std::vector<Dataset> shards;  // IID partition of `train`, one per client
};

/// Two Gaussian clusters centred at +/- separation * u for a random unit
/// vector u, unit-variance noise, balanced labels; 80/20 train/test split
/// and equal IID shards. Deterministic in `seed`.
FederatedData make_dataset(std::uint64_t seed, std::size_t num_clients, std::size_t n_samples = 2000,
                           std::size_t dim = 16);

inline constexpr double kClusterSeparation = 2.5;
inline constexpr double kLearningRate = 0.1;

/// Logistic-regression weights followed by the bias term.
struct ModelParams {
    std::vector<double> weights;

    static ModelParams zeros(std::size_t dim) { return ModelParams{std::vector<double>(dim + 1, 0.0)}; }
    std::size_t dim() const noexcept { return weights.empty() ? 0 : weights.size() - 1; }
    bool finite() const noexcept;

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

class EmptyUpdateSet : public std::invalid_argument {
public:
    EmptyUpdateSet() : std::invalid_argument("aggregation needs at least one update") {}
};

struct WeightedUpdate {
    ModelParams params;
    std::size_t n_samples = 0;
};

/// Mean logistic loss over `data`.
double logistic_loss(const ModelParams& model, const Dataset& data);
/// Gradient of logistic_loss with respect to every parameter.
std::vector<double> logistic_gradient(const ModelParams& model, const Dataset& data);

/// Full-batch gradient descent for `epochs` passes at kLearningRate.
WeightedUpdate local_fit(const Dataset& shard, const ModelParams& global, std::size_t epochs);

/// Sample-count-weighted coordinate-wise mean.
ModelParams aggregate_fedavg(std::span<const WeightedUpdate> updates);

double accuracy(const ModelParams& model, const Dataset& data);

}  // namespace flsim
