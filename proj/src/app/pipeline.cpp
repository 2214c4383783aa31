#include "fedcpc/app/pipeline.hpp"

#include <fstream>
#include <iomanip>

#include <spdlog/spdlog.h>

#include "fedcpc/dsp/mfcc.hpp"
#include "fedcpc/federation/weights.hpp"

namespace fedcpc::app {

using corpus::ManifestEntry;
using corpus::Split;
using federation::GlobalModelState;
using federation::RoundMetrics;
using federation::Stage;

// ---- workspace ----

Workspace::Workspace(std::filesystem::path data_dir) : root_(std::move(data_dir)) {}

const corpus::CorpusManifest& Workspace::manifest() {
    if (!manifest_) {
        manifest_ = corpus::read_manifest(root_ / "manifest.jsonl");
        manifest_->validate();
    }
    return *manifest_;
}

std::vector<ManifestEntry> Workspace::entries(Split split, const std::optional<std::string>& client) {
    std::vector<ManifestEntry> out;
    for (const auto& e : manifest().entries)
        if (e.split == split && (!client || e.client_id == client)) out.push_back(e);
    return out;
}

const std::vector<float>& Workspace::wave(const ManifestEntry& e) {
    auto it = waves_.find(e.utterance_id);
    if (it == waves_.end()) it = waves_.emplace(e.utterance_id, dsp::read_wav(root_ / e.wav_path).samples).first;
    return it->second;
}

const Tensor& Workspace::mfcc(const ManifestEntry& e) {
    auto it = mfccs_.find(e.utterance_id);
    if (it != mfccs_.end()) return it->second;
    const auto cached = root_ / "mfcc" / (e.utterance_id + ".fcw");
    Tensor t;
    if (std::filesystem::exists(cached)) {
        t = federation::load_weights(cached).get("mfcc");
    } else {
        dsp::Waveform w;
        w.samples = wave(e);
        t = dsp::mfcc(w).to_tensor();
    }
    return mfccs_.emplace(e.utterance_id, std::move(t)).first->second;
}

// ---- seeds ----

std::uint64_t cpc_init_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "cpc-init"); }
std::uint64_t cpc_client_seed(const RunConfig& cfg, std::size_t client) {
    return derive_seed(derive_seed(cfg.seed, "cpc-train"), client);
}
std::uint64_t cpc_eval_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "cpc-eval"); }
std::uint64_t classifier_init_seed(const RunConfig& cfg) { return derive_seed(cfg.seed, "classifier-init"); }
std::uint64_t classifier_client_seed(const RunConfig& cfg, std::size_t client) {
    return derive_seed(derive_seed(cfg.seed, "classifier-train"), client);
}

federation::SessionOptions session_options(const RunConfig& cfg) {
    federation::SessionOptions o;
    o.round_timeout = std::chrono::milliseconds(static_cast<long long>(cfg.round_timeout_s * 1000.0));
    return o;
}

namespace {

void prepare_out_dir(const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec) throw IoError("cannot create " + cfg.out_dir.string() + ": " + ec.message());
    write_resolved(cfg.out_dir / "config.ini", cfg);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << std::setprecision(17);
    return os;
}

void check_clients(const RunConfig& cfg, Workspace& ws) {
    const auto ids = ws.manifest().client_ids();
    if (ids.size() != cfg.plan.n_clients)
        throw ConfigError("the corpus is partitioned for " + std::to_string(ids.size()) + " clients, the plan has " +
                          std::to_string(cfg.plan.n_clients));
}

std::vector<std::vector<float>> waves_of(Workspace& ws, const std::vector<ManifestEntry>& entries) {
    std::vector<std::vector<float>> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(ws.wave(e));
    return out;
}

void write_round_metrics(const std::filesystem::path& path, const std::vector<RoundMetrics>& rows) {
    auto os = open_out(path);
    federation::write_round_metrics_header(os);
    for (const auto& r : rows) federation::write_round_metrics_row(os, r);
}

void write_pretrain_artifacts(const RunConfig& cfg, const PretrainResult& r) {
    federation::save_weights(cfg.out_dir / "cpc.fcw", r.model.params);
    auto os = open_out(cfg.out_dir / "pretrain_curve.csv");
    cpc::write_curve_header(os, cfg.cpc.prediction_steps);
    for (const auto& s : r.curve) cpc::write_curve_row(os, s);
    if (cfg.mode == Mode::federated) write_round_metrics(cfg.out_dir / "federation_metrics.csv", r.rounds);
}

void write_train_artifacts(const RunConfig& cfg, const TrainResult& r) {
    federation::save_weights(cfg.out_dir / "classifier.fcw", r.model.params);
    federation::save_weights(cfg.out_dir / "classifier_last.fcw", r.last);
    if (cfg.mode == Mode::federated) {
        write_round_metrics(cfg.out_dir / "federation_metrics.csv", r.rounds);
        return;
    }
    auto os = open_out(cfg.out_dir / "train_history.csv");
    os << "epoch,train_loss,train_accuracy,dev_loss,dev_precision,dev_recall,dev_macro_f1\n";
    for (std::size_t i = 0; i < r.history.size(); ++i) {
        const auto& h = r.history[i];
        const auto& d = r.rounds[i];
        os << h.epoch << ',' << h.loss << ',' << h.accuracy << ',' << d.loss << ',' << d.precision.value_or(0) << ','
           << d.recall.value_or(0) << ',' << d.macro_f1.value_or(0) << '\n';
    }
}

cpc::CpcModel model_from(const cpc::CpcConfig& cfg, const ParameterSet& weights, const std::string& what) {
    auto m = cpc::make_model(cfg, 0);
    try {
        m.params.assign(weights);
    } catch (const ContractViolation& e) {
        throw ConfigError(what + " does not match the cpc config: " + e.what());
    }
    return m;
}

} // namespace

// ---- data ----

corpus::CorpusManifest generate_corpus(const RunConfig& cfg) {
    auto spec = cfg.corpus;
    spec.clients = cfg.plan.n_clients;
    spec.seed = cfg.seed;
    spdlog::info("generating corpus into {}", cfg.data_dir.string());
    auto m = corpus::gen_corpus(spec, cfg.data_dir);
    write_resolved(cfg.data_dir / "config.ini", cfg);
    return m;
}

std::size_t featurize(const RunConfig&, Workspace& ws, bool csv) {
    const auto dir = ws.root() / "mfcc";
    std::filesystem::create_directories(dir);
    std::size_t n = 0;
    for (const auto& e : ws.manifest().entries) {
        const Tensor& t = ws.mfcc(e);
        if (csv) {
            auto os = open_out(dir / (e.utterance_id + ".csv"));
            for (std::size_t r = 0; r < t.dim(0); ++r)
                for (std::size_t c = 0; c < t.dim(1); ++c)
                    os << t.at(r * t.dim(1) + c) << (c + 1 == t.dim(1) ? '\n' : ',');
        } else {
            ParameterSet p;
            p.add("mfcc", t);
            federation::save_weights(dir / (e.utterance_id + ".fcw"), p);
        }
        ++n;
    }
    return n;
}

// ---- pretraining ----

GlobalModelState initial_pretrain_state(const RunConfig& cfg) {
    GlobalModelState s;
    s.stage = Stage::pretrain;
    s.weights = federation::federated_subset(cpc::make_model(cfg.cpc, cpc_init_seed(cfg)).params, Stage::pretrain);
    return s;
}

std::unique_ptr<federation::CpcTrainer> make_pretrain_client(const RunConfig& cfg, Workspace& ws, std::size_t index) {
    check_clients(cfg, ws);
    auto entries = ws.entries(Split::train, corpus::client_name(index));
    if (entries.empty()) throw ConfigError("client " + corpus::client_name(index) + " has no training clips");
    return std::make_unique<federation::CpcTrainer>(cpc::make_model(cfg.cpc, cpc_init_seed(cfg)), waves_of(ws, entries),
                                                    OptimizerState::adam(cfg.cpc.lr), cpc_client_seed(cfg, index));
}

cpc::EpochStats evaluate_cpc(const RunConfig& cfg, Workspace& ws, cpc::CpcModel& model) {
    const auto dev = waves_of(ws, ws.entries(Split::dev));
    if (dev.empty()) return {};
    return cpc::evaluate(model, dev, cpc_eval_seed(cfg));
}

federation::RoundEvaluator pretrain_evaluator(const RunConfig& cfg, Workspace& ws, std::vector<cpc::EpochStats>* curve) {
    auto dev = std::make_shared<std::vector<std::vector<float>>>(waves_of(ws, ws.entries(Split::dev)));
    return [cfg, dev, curve](const GlobalModelState& s) {
        RoundMetrics m;
        m.round = s.round;
        if (dev->empty()) return m;
        auto model = model_from(cfg.cpc, s.weights, "global model");
        auto stats = cpc::evaluate(model, *dev, cpc_eval_seed(cfg));
        stats.epoch = s.round;
        m.loss = stats.loss;
        spdlog::info("round {}: dev InfoNCE {:.4f}, k=1 accuracy {:.3f}", s.round, stats.loss,
                     stats.accuracy.empty() ? 0.0 : stats.accuracy[0]);
        if (curve) curve->push_back(stats);
        return m;
    };
}

cpc::CpcModel load_cpc(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
    if (checkpoint.empty()) throw ConfigError("a pretrained CPC checkpoint is required (classifier.encoder)");
    return model_from(cfg.cpc, federation::load_weights(checkpoint), "checkpoint " + checkpoint.string());
}

PretrainResult pretrain_cpc(const RunConfig& cfg, Workspace& ws) {
    cfg.validate();
    if (cfg.mode == Mode::federated && cfg.transport == Transport::tcp)
        throw ConfigError("tcp federation runs as separate processes: use the serve and client commands");
    prepare_out_dir(cfg);
    PretrainResult r{cpc::make_model(cfg.cpc, cpc_init_seed(cfg)), {}, {}};
    if (cfg.mode == Mode::central) {
        const auto waves = waves_of(ws, ws.entries(Split::train));
        if (waves.empty()) throw ConfigError("no training clips in the corpus");
        auto opt = OptimizerState::adam(cfg.cpc.lr);
        r.curve = cpc::pretrain(r.model, waves, opt, cpc_client_seed(cfg, 0), cfg.cpc.epochs,
                                [](const cpc::EpochStats& s) {
                                    spdlog::info("epoch {}: InfoNCE {:.4f}, k=1 accuracy {:.3f}", s.epoch, s.loss,
                                                 s.accuracy.empty() ? 0.0 : s.accuracy[0]);
                                });
    } else {
        std::vector<std::unique_ptr<federation::CpcTrainer>> trainers;
        std::vector<federation::ClientSlot> slots;
        for (std::size_t i = 0; i < cfg.plan.n_clients; ++i) {
            trainers.push_back(make_pretrain_client(cfg, ws, i));
            slots.push_back({corpus::client_name(i), trainers.back().get()});
        }
        auto res = federation::run_federation_inprocess(initial_pretrain_state(cfg), slots, cfg.plan,
                                                        session_options(cfg), pretrain_evaluator(cfg, ws, &r.curve));
        r.model.params.assign(res.final_state.weights);
        r.rounds = std::move(res.rounds);
    }
    write_pretrain_artifacts(cfg, r);
    return r;
}

// ---- downstream ----

classifier::DownstreamModel build_downstream(const RunConfig& cfg, const cpc::CpcModel* encoder) {
    const auto rc = cfg.resolved_classifier();
    if (cfg.features == Features::mfcc) return classifier::make_classifier(rc, classifier_init_seed(cfg));
    if (!encoder) throw ConfigError("cpc features need a pretrained encoder");
    return classifier::make_cpc_classifier(rc, classifier_init_seed(cfg), *encoder, cfg.finetune);
}

std::vector<classifier::LabeledExample> downstream_examples(const RunConfig& cfg, Workspace& ws,
                                                            classifier::DownstreamModel& model,
                                                            const std::vector<ManifestEntry>& entries) {
    std::optional<cpc::CpcModel> encoder;
    if (cfg.features == Features::cpc && !cfg.finetune) {
        const std::vector<std::string> prefix{"encoder."};
        encoder = cpc::CpcModel{cfg.cpc, model.params.select(prefix)};
    }
    std::vector<classifier::LabeledExample> out;
    out.reserve(entries.size());
    for (const auto& e : entries) {
        classifier::LabeledExample ex;
        ex.label = e.label;
        ex.speaker_id = e.speaker_id;
        ex.utterance_id = e.utterance_id;
        if (cfg.features == Features::mfcc) {
            ex.input = ws.mfcc(e);
        } else if (encoder) {
            ex.input = cpc::extract_context_features(*encoder, ws.wave(e));
        } else {
            const auto& w = ws.wave(e);
            ex.input = Tensor::from<float>({1, w.size()}, w);
        }
        out.push_back(std::move(ex));
    }
    return out;
}

GlobalModelState initial_downstream_state(const RunConfig& cfg) {
    std::optional<cpc::CpcModel> enc;
    if (cfg.features == Features::cpc) enc = load_cpc(cfg, cfg.encoder);
    GlobalModelState s;
    s.stage = Stage::downstream;
    s.weights = federation::federated_subset(build_downstream(cfg, enc ? &*enc : nullptr).params, Stage::downstream);
    return s;
}

std::unique_ptr<federation::DownstreamTrainer> make_downstream_client(const RunConfig& cfg, Workspace& ws,
                                                                      std::size_t index) {
    check_clients(cfg, ws);
    auto entries = ws.entries(Split::train, corpus::client_name(index));
    if (entries.empty()) throw ConfigError("client " + corpus::client_name(index) + " has no training clips");
    // The encoder weights arrive with the first broadcast; this one only fixes the structure.
    const auto placeholder = cpc::make_model(cfg.cpc, cpc_init_seed(cfg));
    auto model = build_downstream(cfg, &placeholder);
    auto opt = OptimizerState::adam(cfg.classifier_lr);
    const auto seed = classifier_client_seed(cfg, index);
    if (cfg.features == Features::mfcc) {
        auto data = downstream_examples(cfg, ws, model, entries);
        return std::make_unique<federation::DownstreamTrainer>(std::move(model), std::move(data), opt, seed);
    }
    const std::size_t n = entries.size();
    auto prepare = [cfg, &ws, entries](classifier::DownstreamModel& m) {
        return downstream_examples(cfg, ws, m, entries);
    };
    return std::make_unique<federation::DownstreamTrainer>(std::move(model), n, prepare, opt, seed);
}

namespace {

struct DevState {
    classifier::DownstreamModel model;
    std::vector<ManifestEntry> entries;
    std::vector<classifier::LabeledExample> examples;
    bool prepared = false;
};

RoundMetrics score_dev(const RunConfig& cfg, Workspace& ws, DevState& dev, const ParameterSet& weights,
                       std::uint64_t round) {
    RoundMetrics m;
    m.round = round;
    dev.model.params.assign(weights);
    if (!dev.prepared) {
        dev.examples = downstream_examples(cfg, ws, dev.model, dev.entries);
        dev.prepared = true;
    }
    if (dev.examples.empty()) return m;
    const auto preds = classifier::predict(dev.model, dev.examples);
    std::vector<int> truth, pred;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        truth.push_back(dev.examples[i].label);
        pred.push_back(preds[i].label);
    }
    const auto rep = metrics::macro_metrics(metrics::confusion(truth, pred));
    m.loss = classifier::evaluate_loss(dev.model, dev.examples).loss;
    m.precision = rep.macro.precision;
    m.recall = rep.macro.recall;
    m.macro_f1 = rep.macro.f1;
    return m;
}

// Remembers the weights with the highest dev macro-F1; the earliest wins ties.
struct DevSelection {
    std::optional<double> best;
    std::uint64_t round = 0;
    ParameterSet weights;

    void offer(const GlobalModelState& s, const RoundMetrics& m) {
        if (!m.macro_f1 || (best && *m.macro_f1 <= *best)) return;
        best = m.macro_f1;
        round = s.round;
        weights = s.weights;
    }
};

void finish_selection(const RunConfig& cfg, TrainResult& r, const DevSelection& sel, std::uint64_t last_round) {
    r.last = r.model.params;
    r.selected = last_round;
    if (!cfg.select_best_dev || !sel.best) return;
    r.model.params.assign(sel.weights);
    r.selected = sel.round;
    spdlog::info("keeping round {} (dev macro-F1 {:.3f})", sel.round, *sel.best);
}

} // namespace

federation::RoundEvaluator downstream_evaluator(const RunConfig& cfg, Workspace& ws) {
    const auto placeholder = cpc::make_model(cfg.cpc, cpc_init_seed(cfg));
    auto dev = std::make_shared<DevState>(DevState{build_downstream(cfg, &placeholder), ws.entries(Split::dev), {}, false});
    return [cfg, &ws, dev](const GlobalModelState& s) {
        auto m = score_dev(cfg, ws, *dev, s.weights, s.round);
        spdlog::info("round {}: dev loss {:.4f}, macro-F1 {:.3f}", s.round, m.loss, m.macro_f1.value_or(0));
        return m;
    };
}

TrainResult train_classifier(const RunConfig& cfg, Workspace& ws) {
    cfg.validate();
    if (cfg.mode == Mode::federated && cfg.transport == Transport::tcp)
        throw ConfigError("tcp federation runs as separate processes: use the serve and client commands");
    prepare_out_dir(cfg);
    std::optional<cpc::CpcModel> enc;
    if (cfg.features == Features::cpc) enc = load_cpc(cfg, cfg.encoder);
    TrainResult r{build_downstream(cfg, enc ? &*enc : nullptr), {}, {}, {}, 0};
    DevSelection sel;
    auto evaluate = [&sel, dev = downstream_evaluator(cfg, ws)](const GlobalModelState& s) {
        auto m = dev(s);
        sel.offer(s, m);
        return m;
    };
    std::uint64_t last_round = 0;

    if (cfg.mode == Mode::central) {
        const auto data = downstream_examples(cfg, ws, r.model, ws.entries(Split::train));
        if (data.empty()) throw ConfigError("no training clips in the corpus");
        auto opt = OptimizerState::adam(cfg.classifier_lr);
        for (std::size_t e = 0; e < cfg.classifier_epochs; ++e) {
            auto h = classifier::train_epoch(r.model, data, opt, classifier_client_seed(cfg, 0), e);
            spdlog::info("epoch {}: train loss {:.4f}, accuracy {:.3f}", e, h.loss, h.accuracy);
            r.history.push_back(h);
            GlobalModelState s{e + 1, federation::federated_subset(r.model.params, Stage::downstream), Stage::downstream};
            r.rounds.push_back(evaluate(s));
            last_round = e + 1;
        }
    } else {
        std::vector<std::unique_ptr<federation::DownstreamTrainer>> trainers;
        std::vector<federation::ClientSlot> slots;
        for (std::size_t i = 0; i < cfg.plan.n_clients; ++i) {
            trainers.push_back(make_downstream_client(cfg, ws, i));
            slots.push_back({corpus::client_name(i), trainers.back().get()});
        }
        auto init = initial_downstream_state(cfg);
        auto res = federation::run_federation_inprocess(std::move(init), slots, cfg.plan, session_options(cfg), evaluate);
        r.model.params.assign(res.final_state.weights);
        r.rounds = std::move(res.rounds);
        last_round = res.final_state.round;
    }
    finish_selection(cfg, r, sel, last_round);
    write_train_artifacts(cfg, r);
    return r;
}

EvalResult evaluate_classifier(const RunConfig& cfg, Workspace& ws, classifier::DownstreamModel& model, Split split) {
    EvalResult r;
    r.entries = ws.entries(split);
    if (r.entries.empty()) throw ConfigError(std::string("the ") + corpus::split_name(split) + " split is empty");
    const auto examples = downstream_examples(cfg, ws, model, r.entries);
    r.predictions = classifier::predict(model, examples);
    std::vector<int> truth, pred;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        truth.push_back(examples[i].label);
        pred.push_back(r.predictions[i].label);
    }
    r.cm = metrics::confusion(truth, pred);
    r.report = metrics::macro_metrics(r.cm);
    return r;
}

classifier::DownstreamModel load_classifier(const RunConfig& cfg, const std::filesystem::path& checkpoint) {
    const auto placeholder = cpc::make_model(cfg.cpc, 0);
    auto model = build_downstream(cfg, &placeholder);
    const auto weights = federation::load_weights(checkpoint);
    if (weights.size() != model.params.size())
        throw ConfigError("checkpoint " + checkpoint.string() + " does not match the configured classifier");
    try {
        model.params.assign(weights);
    } catch (const ContractViolation& e) {
        throw ConfigError("checkpoint " + checkpoint.string() + " does not match the configured classifier: " +
                          e.what());
    }
    return model;
}

void write_evaluation(const std::filesystem::path& dir, Split split, const EvalResult& r, bool include_weighted) {
    std::filesystem::create_directories(dir);
    const std::string tag = corpus::split_name(split);
    metrics::emit_report(r.report, r.cm, dir / ("metrics_" + tag), include_weighted);
    auto os = open_out(dir / ("predictions_" + tag + ".csv"));
    os << "utterance_id,true,pred,logit0,logit1,logit2\n";
    for (std::size_t i = 0; i < r.entries.size(); ++i) {
        const auto& p = r.predictions[i];
        os << r.entries[i].utterance_id << ',' << classifier::label_name(r.entries[i].label) << ','
           << classifier::label_name(p.label) << ',' << p.logits[0] << ',' << p.logits[1] << ',' << p.logits[2] << '\n';
    }
}

// ---- separate processes ----

GlobalModelState serve(const RunConfig& cfg, Workspace& ws, Stage stage) {
    cfg.validate();
    prepare_out_dir(cfg);
    const auto options = session_options(cfg);
    federation::TcpListener listener(cfg.host, cfg.port);
    {
        auto os = open_out(cfg.out_dir / "server.port");
        os << listener.port() << '\n';
    }
    spdlog::info("serving {} on {}:{}, waiting for {} clients", federation::stage_name(stage), cfg.host,
                 listener.port(), cfg.plan.n_clients);

    GlobalModelState init = stage == Stage::pretrain ? initial_pretrain_state(cfg) : initial_downstream_state(cfg);
    PretrainResult pre{cpc::make_model(cfg.cpc, cpc_init_seed(cfg)), {}, {}};
    federation::RoundEvaluator evaluate =
        stage == Stage::pretrain ? pretrain_evaluator(cfg, ws, &pre.curve) : downstream_evaluator(cfg, ws);

    std::vector<std::unique_ptr<federation::Connection>> conns;
    const auto deadline = std::chrono::steady_clock::now() + options.hello_timeout;
    while (conns.size() < cfg.plan.n_clients) {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        auto c = listener.accept(std::max(left, std::chrono::milliseconds(0)));
        if (!c) throw federation::ConnectionClosed("only " + std::to_string(conns.size()) + " of " +
                                                   std::to_string(cfg.plan.n_clients) + " clients connected");
        c->max_frame = cfg.max_frame_mib << 20;
        conns.push_back(std::move(c));
    }
    auto peers = federation::accept_hellos(std::move(conns), stage, options.hello_timeout);
    std::vector<RoundMetrics> rounds;
    DevSelection sel;
    auto final_state = federation::serve_rounds(std::move(init), peers, cfg.plan, options, [&](const GlobalModelState& s) {
        rounds.push_back(evaluate(s));
        if (stage == Stage::downstream) sel.offer(s, rounds.back());
    });

    RunConfig as_federated = cfg;
    as_federated.mode = Mode::federated;
    if (stage == Stage::pretrain) {
        pre.model.params.assign(final_state.weights);
        pre.rounds = std::move(rounds);
        write_pretrain_artifacts(as_federated, pre);
    } else {
        const auto placeholder = cpc::make_model(cfg.cpc, cpc_init_seed(cfg));
        TrainResult tr{build_downstream(cfg, &placeholder), {}, std::move(rounds), {}, 0};
        tr.model.params.assign(final_state.weights);
        finish_selection(cfg, tr, sel, final_state.round);
        write_train_artifacts(as_federated, tr);
    }
    return final_state;
}

std::size_t run_tcp_client(const RunConfig& cfg, Workspace& ws, Stage stage, std::size_t index, std::uint16_t port) {
    cfg.validate();
    if (index >= cfg.plan.n_clients) throw ConfigError("client index out of range");
    std::unique_ptr<federation::LocalTrainer> trainer;
    if (stage == Stage::pretrain) trainer = make_pretrain_client(cfg, ws, index);
    else trainer = make_downstream_client(cfg, ws, index);
    const auto options = session_options(cfg);
    auto conn = federation::tcp_connect(cfg.host, port, options.hello_timeout);
    conn->max_frame = cfg.max_frame_mib << 20;
    spdlog::info("{} connected to {}:{}", corpus::client_name(index), cfg.host, port);
    return federation::run_client(*conn, corpus::client_name(index), *trainer, cfg.plan.local_epochs,
                                  options.round_timeout);
}

} // namespace fedcpc::app
