#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcpc/classifier/classifier.hpp"
#include "fedcpc/cpc/cpc.hpp"
#include "fedcpc/federation/fedavg.hpp"
#include "fedcpc/federation/wire.hpp"

namespace fedcpc::federation {

// The client side of a round: load the broadcast weights, train locally, hand back the federated subset.
class LocalTrainer {
public:
    virtual ~LocalTrainer() = default;
    virtual Stage stage() const = 0;
    virtual std::uint64_t n_samples() const = 0;
    virtual ParameterSet train_round(const ParameterSet& global, std::uint64_t round, std::size_t epochs) = 0;
};

// CPC pretraining on a client's utterances. Epochs are numbered globally (round * E + e),
// so a single client reproduces centralized pretraining exactly. Adam state persists across rounds.
class CpcTrainer : public LocalTrainer {
public:
    CpcTrainer(cpc::CpcModel model, std::vector<std::vector<float>> utterances, OptimizerState opt, std::uint64_t seed);

    Stage stage() const override { return Stage::pretrain; }
    std::uint64_t n_samples() const override { return utterances_.size(); }
    ParameterSet train_round(const ParameterSet& global, std::uint64_t round, std::size_t epochs) override;

    const cpc::CpcModel& model() const { return model_; }
    const std::vector<cpc::EpochStats>& history() const { return history_; }

private:
    cpc::CpcModel model_;
    std::vector<std::vector<float>> utterances_;
    OptimizerState opt_;
    std::uint64_t seed_;
    std::vector<cpc::EpochStats> history_;
};

// Downstream classifier training. `prepare`, when set, runs once on the first broadcast
// (for example to compute frozen-encoder features from the received encoder weights).
class DownstreamTrainer : public LocalTrainer {
public:
    using Prepare = std::function<std::vector<classifier::LabeledExample>(classifier::DownstreamModel&)>;

    DownstreamTrainer(classifier::DownstreamModel model, std::vector<classifier::LabeledExample> data,
                      OptimizerState opt, std::uint64_t seed);
    DownstreamTrainer(classifier::DownstreamModel model, std::size_t n_samples, Prepare prepare, OptimizerState opt,
                      std::uint64_t seed);

    Stage stage() const override { return Stage::downstream; }
    std::uint64_t n_samples() const override { return n_samples_; }
    ParameterSet train_round(const ParameterSet& global, std::uint64_t round, std::size_t epochs) override;

    const classifier::DownstreamModel& model() const { return model_; }
    const std::vector<classifier::EpochHistory>& history() const { return history_; }

private:
    classifier::DownstreamModel model_;
    std::vector<classifier::LabeledExample> data_;
    std::size_t n_samples_;
    Prepare prepare_;
    OptimizerState opt_;
    std::uint64_t seed_;
    std::vector<classifier::EpochHistory> history_;
};

struct SessionOptions {
    std::chrono::milliseconds hello_timeout{std::chrono::minutes(10)};
    std::chrono::milliseconds round_timeout{std::chrono::hours(2)};
};

// Client role: HELLO, then answer every GLOBAL_WEIGHTS with a CLIENT_UPDATE until SHUTDOWN.
// Returns the number of rounds served. Returns cleanly on SHUTDOWN at any point.
std::size_t run_client(Connection& conn, const std::string& client_id, LocalTrainer& trainer, std::size_t local_epochs,
                       std::chrono::milliseconds timeout);

struct Peer {
    std::unique_ptr<Connection> conn;
    std::string client_id;
    std::uint64_t n_samples = 0;
};

// Reads one HELLO per connection. ProtocolError on a wrong stage, duplicate id or other first message.
std::vector<Peer> accept_hellos(std::vector<std::unique_ptr<Connection>> conns, Stage stage,
                                std::chrono::milliseconds timeout);

// Broadcast, collect all M updates, aggregate. StragglerError (listing the missing ids) when any
// client closes, leaves with SHUTDOWN or misses the deadline; nothing is aggregated in that case.
GlobalModelState run_round(const GlobalModelState& state, std::span<Peer> peers, const SessionOptions& options);

struct RoundMetrics {
    std::uint64_t round = 0;
    double loss = 0;
    std::optional<double> precision, recall, macro_f1;
};

using RoundCallback = std::function<void(const GlobalModelState&)>;
using RoundEvaluator = std::function<RoundMetrics(const GlobalModelState&)>;

// Server role over connected peers: `plan.rounds` rounds, then SHUTDOWN to everyone
// (also sent, best effort, when a round fails).
GlobalModelState serve_rounds(GlobalModelState state, std::span<Peer> peers, const FederationPlan& plan,
                              const SessionOptions& options, const RoundCallback& after_round = {});

struct FederationResult {
    GlobalModelState final_state;
    std::vector<RoundMetrics> rounds;
};

struct ClientSlot {
    std::string client_id;
    LocalTrainer* trainer = nullptr;
};

// Server and clients in one process over in-process connections; clients run on their own threads.
// `logs`, when non-empty, holds one log per client recording every frame at that client's end.
FederationResult run_federation_inprocess(GlobalModelState initial, std::span<const ClientSlot> clients,
                                          const FederationPlan& plan, const SessionOptions& options,
                                          const RoundEvaluator& evaluate = {},
                                          std::span<const std::shared_ptr<FrameLog>> logs = {});

void write_round_metrics_header(std::ostream& os);
void write_round_metrics_row(std::ostream& os, const RoundMetrics& m);

} // namespace fedcpc::federation
