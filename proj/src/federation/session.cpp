#include "fedcpc/federation/session.hpp"

#include <algorithm>
#include <exception>
#include <ostream>
#include <set>
#include <thread>

#include <spdlog/spdlog.h>

#include "fedcpc/federation/weights.hpp"

namespace fedcpc::federation {

CpcTrainer::CpcTrainer(cpc::CpcModel model, std::vector<std::vector<float>> utterances, OptimizerState opt,
                       std::uint64_t seed)
    : model_(std::move(model)), utterances_(std::move(utterances)), opt_(std::move(opt)), seed_(seed) {}

ParameterSet CpcTrainer::train_round(const ParameterSet& global, std::uint64_t round, std::size_t epochs) {
    model_.params.assign(global);
    for (std::size_t e = 0; e < epochs; ++e)
        history_.push_back(cpc::pretrain_epoch(model_, utterances_, opt_, seed_, round * epochs + e));
    return federated_subset(model_.params, Stage::pretrain);
}

DownstreamTrainer::DownstreamTrainer(classifier::DownstreamModel model, std::vector<classifier::LabeledExample> data,
                                     OptimizerState opt, std::uint64_t seed)
    : model_(std::move(model)), data_(std::move(data)), n_samples_(data_.size()), opt_(std::move(opt)), seed_(seed) {}

DownstreamTrainer::DownstreamTrainer(classifier::DownstreamModel model, std::size_t n_samples, Prepare prepare,
                                     OptimizerState opt, std::uint64_t seed)
    : model_(std::move(model)), n_samples_(n_samples), prepare_(std::move(prepare)), opt_(std::move(opt)),
      seed_(seed) {}

ParameterSet DownstreamTrainer::train_round(const ParameterSet& global, std::uint64_t round, std::size_t epochs) {
    model_.params.assign(global);
    if (prepare_) {
        data_ = prepare_(model_);
        prepare_ = nullptr;
        if (data_.size() != n_samples_) throw ContractViolation("prepared data size differs from the announced count");
    }
    auto h = classifier::train_local(model_, data_, opt_, seed_, epochs, round * epochs);
    history_.insert(history_.end(), h.begin(), h.end());
    return federated_subset(model_.params, Stage::downstream);
}

std::size_t run_client(Connection& conn, const std::string& client_id, LocalTrainer& trainer, std::size_t local_epochs,
                       std::chrono::milliseconds timeout) {
    conn.send(Message::hello(client_id, trainer.n_samples(), trainer.stage()));
    std::size_t served = 0;
    for (;;) {
        std::optional<Message> m;
        try {
            m = conn.receive(timeout);
        } catch (const ConnectionClosed&) {
            throw ProtocolError("server closed the connection without SHUTDOWN");
        }
        if (!m) throw ProtocolError("timed out waiting for the server");
        if (m->type == MessageType::shutdown) return served;
        if (m->type != MessageType::global_weights)
            throw ProtocolError("client expected GLOBAL_WEIGHTS or SHUTDOWN");
        const ParameterSet global = deserialize_weights(m->payload);
        ParameterSet local = trainer.train_round(global, m->round, local_epochs);
        conn.send(Message::client_update(m->round, client_id, trainer.n_samples(), serialize_weights(local)));
        ++served;
    }
}

std::vector<Peer> accept_hellos(std::vector<std::unique_ptr<Connection>> conns, Stage stage,
                                std::chrono::milliseconds timeout) {
    std::vector<Peer> peers;
    std::set<std::string> seen;
    for (auto& c : conns) {
        auto m = c->receive(timeout);
        if (!m) throw StragglerError("a client connected but never sent HELLO");
        if (m->type != MessageType::hello) throw ProtocolError("first message of a session must be HELLO");
        if (m->stage != stage)
            throw ProtocolError("client '" + m->client_id + "' is in stage " + stage_name(m->stage) + ", server in " +
                                stage_name(stage));
        if (m->n_samples == 0) throw ProtocolError("client '" + m->client_id + "' has no samples");
        if (!seen.insert(m->client_id).second) throw ProtocolError("duplicate client_id '" + m->client_id + "'");
        peers.push_back({std::move(c), m->client_id, m->n_samples});
    }
    // Accept order depends on timing; id order does not.
    std::sort(peers.begin(), peers.end(), [](const Peer& a, const Peer& b) { return a.client_id < b.client_id; });
    return peers;
}

GlobalModelState run_round(const GlobalModelState& state, std::span<Peer> peers, const SessionOptions& options) {
    const auto payload = serialize_weights(state.weights);
    std::vector<std::string> missing;
    for (auto& p : peers) {
        try {
            p.conn->send(Message::global_weights(state.round, payload));
        } catch (const ConnectionClosed&) {
            missing.push_back(p.client_id);
        }
    }

    const auto deadline = std::chrono::steady_clock::now() + options.round_timeout;
    std::vector<ClientUpdate> updates;
    for (auto& p : peers) {
        if (std::find(missing.begin(), missing.end(), p.client_id) != missing.end()) continue;
        const auto left = std::max(std::chrono::milliseconds(0), std::chrono::duration_cast<std::chrono::milliseconds>(
                                                                     deadline - std::chrono::steady_clock::now()));
        std::optional<Message> m;
        try {
            m = p.conn->receive(left);
        } catch (const ConnectionClosed&) {
            missing.push_back(p.client_id);
            continue;
        }
        if (!m || m->type == MessageType::shutdown) {
            missing.push_back(p.client_id);
            continue;
        }
        if (m->type == MessageType::hello) throw ProtocolError("HELLO after session start from '" + p.client_id + "'");
        if (m->type != MessageType::client_update) throw ProtocolError("server expected CLIENT_UPDATE");
        if (m->client_id != p.client_id)
            throw ProtocolError("update claims client_id '" + m->client_id + "' on the connection of '" + p.client_id +
                                "'");
        if (m->round != state.round)
            throw ProtocolError("update from '" + p.client_id + "' is for round " + std::to_string(m->round) +
                                ", expected " + std::to_string(state.round));
        if (m->n_samples != p.n_samples) throw ProtocolError("client '" + p.client_id + "' changed its sample count");
        ClientUpdate u{p.client_id, m->round, m->n_samples, deserialize_weights(m->payload)};
        if (!u.weights.shape_compatible(state.weights))
            throw ProtocolError("update from '" + p.client_id + "' is not shape-compatible with the global model");
        updates.push_back(std::move(u));
    }
    if (!missing.empty()) {
        std::sort(missing.begin(), missing.end());
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
        throw StragglerError("round " + std::to_string(state.round) + " aborted, missing updates from: " + list);
    }

    GlobalModelState next;
    next.round = state.round + 1;
    next.stage = state.stage;
    next.weights = fedavg_aggregate(updates);
    return next;
}

namespace {

void shutdown_all(std::span<Peer> peers) {
    for (auto& p : peers) {
        try {
            p.conn->send(Message::shutdown());
        } catch (const ProtocolError&) {
        }
    }
}

} // namespace

GlobalModelState serve_rounds(GlobalModelState state, std::span<Peer> peers, const FederationPlan& plan,
                              const SessionOptions& options, const RoundCallback& after_round) {
    plan.validate();
    if (peers.size() != plan.n_clients)
        throw ConfigError("plan expects " + std::to_string(plan.n_clients) + " clients, have " +
                          std::to_string(peers.size()));
    try {
        for (std::size_t s = 0; s < plan.rounds; ++s) {
            state = run_round(state, peers, options);
            spdlog::info("round {} aggregated from {} clients", state.round, peers.size());
            if (after_round) after_round(state);
        }
    } catch (...) {
        shutdown_all(peers);
        throw;
    }
    shutdown_all(peers);
    return state;
}

FederationResult run_federation_inprocess(GlobalModelState initial, std::span<const ClientSlot> clients,
                                          const FederationPlan& plan, const SessionOptions& options,
                                          const RoundEvaluator& evaluate,
                                          std::span<const std::shared_ptr<FrameLog>> logs) {
    plan.validate();
    if (clients.size() != plan.n_clients) throw ConfigError("client count does not match the plan");
    if (!logs.empty() && logs.size() != clients.size()) throw ContractViolation("need one frame log per client");

    std::vector<std::unique_ptr<Connection>> server_ends;
    std::vector<std::thread> threads;
    std::vector<std::exception_ptr> errors(clients.size());
    for (std::size_t i = 0; i < clients.size(); ++i) {
        auto [server_end, client_end] = make_inprocess_pair();
        server_ends.push_back(std::move(server_end));
        if (!logs.empty()) client_end = std::make_unique<RecordingConnection>(std::move(client_end), logs[i]);
        std::shared_ptr<Connection> conn = std::move(client_end);
        threads.emplace_back([&, i, conn] {
            try {
                run_client(*conn, clients[i].client_id, *clients[i].trainer, plan.local_epochs, options.round_timeout);
            } catch (...) {
                errors[i] = std::current_exception();
            }
            conn->close();
        });
    }

    FederationResult result;
    std::exception_ptr server_error;
    try {
        auto peers = accept_hellos(std::move(server_ends), initial.stage, options.hello_timeout);
        result.final_state = serve_rounds(std::move(initial), peers, plan, options, [&](const GlobalModelState& s) {
            if (evaluate) result.rounds.push_back(evaluate(s));
        });
    } catch (...) {
        server_error = std::current_exception();
    }
    for (auto& t : threads) t.join();
    if (server_error) std::rethrow_exception(server_error);
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    return result;
}

void write_round_metrics_header(std::ostream& os) { os << "round,loss,precision,recall,macro_f1\n"; }

void write_round_metrics_row(std::ostream& os, const RoundMetrics& m) {
    auto opt = [&](const std::optional<double>& v) {
        if (v) os << *v;
    };
    const auto prec = os.precision(17);
    os << m.round << ',' << m.loss << ',';
    opt(m.precision);
    os << ',';
    opt(m.recall);
    os << ',';
    opt(m.macro_f1);
    os << '\n';
    os.precision(prec);
}

} // namespace fedcpc::federation
