#include "flsim/model.hpp"

#include "flsim/sim_core.hpp"

#include <cmath>
#include <string>

namespace flsim {

void Dataset::push(std::span<const double> x, std::uint8_t y) {
    if (x.size() != dim) throw std::invalid_argument("feature row has the wrong dimension");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(y);
}

FederatedData make_dataset(std::uint64_t seed, std::size_t num_clients, std::size_t n_samples, std::size_t dim) {
    if (num_clients == 0) throw std::invalid_argument("make_dataset needs at least one client");
    if (dim == 0) throw std::invalid_argument("make_dataset needs dim >= 1");
    if (n_samples < 10 * num_clients)
        throw std::invalid_argument("make_dataset needs n_samples >= 10 * num_clients (got " +
                                    std::to_string(n_samples) + ")");

    RngStream rng(seed, "data.make");
    std::vector<double> direction(dim);
    double norm = 0.0;
    while (norm == 0.0) {
        norm = 0.0;
        for (auto& v : direction) {
            v = rng.normal();
            norm += v * v;
        }
    }
    norm = std::sqrt(norm);
    for (auto& v : direction) v /= norm;

    Dataset all{dim, {}, {}};
    std::vector<double> x(dim);
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::uint8_t y = i % 2;
        const double sign = y ? 1.0 : -1.0;
        for (std::size_t j = 0; j < dim; ++j) x[j] = sign * kClusterSeparation * direction[j] + rng.normal();
        all.push(x, y);
    }

    RngStream split_rng(seed, "data.shuffle");
    const auto order = split_rng.shuffle(n_samples);
    const std::size_t n_train = n_samples * 4 / 5;

    FederatedData out;
    out.train.dim = out.test.dim = dim;
    for (std::size_t k = 0; k < n_samples; ++k) {
        const auto i = order[k];
        (k < n_train ? out.train : out.test).push(all.row(i), all.labels[i]);
    }

    const std::size_t per_client = n_train / num_clients;
    out.shards.assign(num_clients, Dataset{dim, {}, {}});
    for (std::size_t c = 0; c < num_clients; ++c) {
        for (std::size_t k = c * per_client; k < (c + 1) * per_client; ++k)
            out.shards[c].push(out.train.row(k), out.train.labels[k]);
    }
    return out;
}

bool ModelParams::finite() const noexcept {
    for (double w : weights)
        if (!std::isfinite(w)) return false;
    return true;
}

namespace {

double score(const ModelParams& m, std::span<const double> x) {
    double z = m.weights.back();
    for (std::size_t j = 0; j < x.size(); ++j) z += m.weights[j] * x[j];
    return z;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void check_shapes(const ModelParams& m, const Dataset& d) {
    if (m.weights.size() != d.dim + 1) throw std::invalid_argument("model and data dimensions differ");
}

}  // namespace

double logistic_loss(const ModelParams& model, const Dataset& data) {
    check_shapes(model, data);
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double z = score(model, data.row(i));
        // log(1 + e^z) - y z, written to avoid overflow
        const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        total += softplus - (data.labels[i] ? z : 0.0);
    }
    return total / static_cast<double>(data.size());
}

std::vector<double> logistic_gradient(const ModelParams& model, const Dataset& data) {
    check_shapes(model, data);
    const std::size_t dim = data.dim;
    std::vector<double> grad(dim + 1, 0.0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto x = data.row(i);
        const double err = sigmoid(score(model, x)) - static_cast<double>(data.labels[i]);
        for (std::size_t j = 0; j < dim; ++j) grad[j] += err * x[j];
        grad[dim] += err;
    }
    for (auto& g : grad) g /= static_cast<double>(data.size());
    return grad;
}

WeightedUpdate local_fit(const Dataset& shard, const ModelParams& global, std::size_t epochs) {
    if (shard.size() == 0) throw std::invalid_argument("local_fit on an empty shard");
    ModelParams model = global;
    for (std::size_t e = 0; e < epochs; ++e) {
        const auto grad = logistic_gradient(model, shard);
        for (std::size_t j = 0; j < grad.size(); ++j) model.weights[j] -= kLearningRate * grad[j];
    }
    return {std::move(model), shard.size()};
}

ModelParams aggregate_fedavg(std::span<const WeightedUpdate> updates) {
    if (updates.empty()) throw EmptyUpdateSet();
    const std::size_t len = updates.front().params.weights.size();
    double total = 0.0;
    for (const auto& u : updates) {
        if (u.params.weights.size() != len) throw std::invalid_argument("updates have different lengths");
        total += static_cast<double>(u.n_samples);
    }
    if (total <= 0.0) throw std::invalid_argument("updates carry no samples");
    ModelParams out{std::vector<double>(len, 0.0)};
    for (const auto& u : updates) {
        const double w = static_cast<double>(u.n_samples) / total;
        for (std::size_t j = 0; j < len; ++j) out.weights[j] += w * u.params.weights[j];
    }
    return out;
}

double accuracy(const ModelParams& model, const Dataset& data) {
    check_shapes(model, data);
    if (data.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool predicted = score(model, data.row(i)) >= 0.0;
        correct += predicted == (data.labels[i] != 0);
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace flsim
