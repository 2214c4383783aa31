#include "fedcpc/federation/fedavg.hpp"

#include <algorithm>
#include <set>

namespace fedcpc::federation {

void FederationPlan::validate() const {
    if (n_clients < 1) throw ConfigError("federation needs at least one client");
    if (local_epochs < 1) throw ConfigError("local_epochs must be at least 1");
}

std::vector<std::string> federated_prefixes(Stage stage) {
    if (stage == Stage::pretrain) return {"encoder.", "heads."};
    return {"encoder.", "classifier."};
}

ParameterSet federated_subset(const ParameterSet& params, Stage stage) {
    const auto prefixes = federated_prefixes(stage);
    return params.select(prefixes);
}

namespace {

template <class Item>
std::vector<const Item*> sorted_by_id(std::span<const Item> items) {
    std::vector<const Item*> out;
    for (const auto& u : items) out.push_back(&u);
    std::sort(out.begin(), out.end(), [](const Item* a, const Item* b) { return a->client_id < b->client_id; });
    for (std::size_t i = 1; i < out.size(); ++i)
        if (out[i]->client_id == out[i - 1]->client_id)
            throw ProtocolError("duplicate client_id '" + out[i]->client_id + "' in one round");
    return out;
}

} // namespace

ParameterSet fedavg_aggregate(std::span<const ClientUpdate> updates) {
    if (updates.empty()) throw ProtocolError("no client updates to aggregate");
    const auto sorted = sorted_by_id(updates);
    const ParameterSet& ref = sorted.front()->weights;
    double n = 0;
    for (const auto* u : sorted) {
        if (u->round != sorted.front()->round) throw ProtocolError("client updates come from different rounds");
        if (u->n_samples == 0) throw ProtocolError("client '" + u->client_id + "' reported zero samples");
        if (!u->weights.shape_compatible(ref))
            throw ProtocolError("update from client '" + u->client_id + "' is not shape-compatible");
        n += static_cast<double>(u->n_samples);
    }

    ParameterSet out;
    std::vector<double> acc;
    for (std::size_t p = 0; p < ref.size(); ++p) {
        const Tensor& first = ref.at(p);
        bool identical = true;
        for (const auto* u : sorted) identical = identical && u->weights.at(p).bit_equal(first);
        if (identical) {
            out.add(ref.name(p), first);
            continue;
        }
        Tensor t(first.shape(), first.dtype());
        dispatch(first.dtype(), [&]<class T>() {
            acc.assign(first.numel(), 0.0);
            for (const auto* u : sorted) {
                const double w = static_cast<double>(u->n_samples);
                auto x = u->weights.at(p).data<T>();
                for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(x[i]);
            }
            auto dst = t.data<T>();
            for (std::size_t i = 0; i < acc.size(); ++i) dst[i] = static_cast<T>(acc[i] / n);
        });
        out.add(ref.name(p), std::move(t));
    }
    return out;
}

ParameterSet fedsgd_step(const ParameterSet& global, std::span<const ClientGradient> grads, double lr) {
    if (grads.empty()) throw ProtocolError("no client gradients to aggregate");
    const auto sorted = sorted_by_id(grads);
    double n = 0;
    for (const auto* g : sorted) {
        if (g->n_samples == 0) throw ProtocolError("client '" + g->client_id + "' reported zero samples");
        n += static_cast<double>(g->n_samples);
    }
    ParameterSet out = global;
    for (std::size_t p = 0; p < out.size(); ++p) {
        Tensor& w = out.at(p);
        const std::string& name = out.name(p);
        std::vector<double> step(w.numel(), 0.0);
        bool any = false;
        for (const auto* g : sorted) {
            if (!g->gradients.contains(name)) continue;
            const Tensor& gt = g->gradients.get(name);
            if (gt.shape() != w.shape()) throw ProtocolError("gradient for '" + name + "' has the wrong shape");
            const double share = static_cast<double>(g->n_samples) / n;
            for (std::size_t i = 0; i < step.size(); ++i) step[i] += share * gt.at(i);
            any = true;
        }
        if (!any) continue;
        dispatch(w.dtype(), [&]<class T>() {
            auto d = w.data<T>();
            for (std::size_t i = 0; i < d.size(); ++i)
                d[i] = static_cast<T>(static_cast<double>(d[i]) - lr * step[i]);
        });
    }
    return out;
}

} // namespace fedcpc::federation
