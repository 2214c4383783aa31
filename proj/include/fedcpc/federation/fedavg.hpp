#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedcpc/federation/wire.hpp"
#include "fedcpc/tensor/parameter_set.hpp"

namespace fedcpc::federation {

struct FederationPlan {
    std::size_t n_clients = 3;
    std::size_t rounds = 50;
    std::size_t local_epochs = 4;

    void validate() const; // ConfigError unless M >= 1 and E >= 1
};

struct GlobalModelState {
    std::uint64_t round = 0;
    ParameterSet weights;
    Stage stage = Stage::pretrain;
};

struct ClientUpdate {
    std::string client_id;
    std::uint64_t round = 0;
    std::uint64_t n_samples = 0;
    ParameterSet weights;
};

// Parameter name prefixes that cross the wire in each stage.
std::vector<std::string> federated_prefixes(Stage stage);
ParameterSet federated_subset(const ParameterSet& params, Stage stage);

// w = sum_m n_m * w_m / n per element, accumulated in f64 over updates sorted by client_id.
// A tensor on which every update agrees bit-for-bit is copied unchanged.
// ProtocolError on an empty list, mixed rounds, duplicate ids, n_m == 0 or shape mismatch.
ParameterSet fedavg_aggregate(std::span<const ClientUpdate> updates);

struct ClientGradient {
    std::string client_id;
    std::uint64_t n_samples = 0;
    ParameterSet gradients; // same names as the global tensors they apply to
};

// Gradient-aggregation form: w - lr * sum_m (n_m / n) * g_m.
ParameterSet fedsgd_step(const ParameterSet& global, std::span<const ClientGradient> grads, double lr);

} // namespace fedcpc::federation
