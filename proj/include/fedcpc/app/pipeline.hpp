#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedcpc/app/config.hpp"
#include "fedcpc/federation/session.hpp"
#include "fedcpc/metrics/metrics.hpp"

namespace fedcpc::app {

// Corpus access for one process: the manifest plus lazily loaded, cached clips and MFCCs.
class Workspace {
public:
    explicit Workspace(std::filesystem::path data_dir);

    const std::filesystem::path& root() const { return root_; }
    const corpus::CorpusManifest& manifest();
    // Entries of a split, optionally restricted to one client, in manifest order.
    std::vector<corpus::ManifestEntry> entries(corpus::Split split, const std::optional<std::string>& client = {});

    const std::vector<float>& wave(const corpus::ManifestEntry& e);
    // [frames x 20] MFCC; read from mfcc/<utterance>.fcw when featurize has run, computed otherwise.
    const Tensor& mfcc(const corpus::ManifestEntry& e);

private:
    std::filesystem::path root_;
    std::optional<corpus::CorpusManifest> manifest_;
    std::map<std::string, std::vector<float>> waves_;
    std::map<std::string, Tensor> mfccs_;
};

// Seeds of the independent random streams of a run.
std::uint64_t cpc_init_seed(const RunConfig& cfg);
std::uint64_t cpc_client_seed(const RunConfig& cfg, std::size_t client);
std::uint64_t cpc_eval_seed(const RunConfig& cfg);
std::uint64_t classifier_init_seed(const RunConfig& cfg);
std::uint64_t classifier_client_seed(const RunConfig& cfg, std::size_t client);

// gen-data: synthesizes the corpus into cfg.data_dir.
corpus::CorpusManifest generate_corpus(const RunConfig& cfg);
// featurize: writes one MFCC tensor per clip under data_dir/mfcc (weights format, or CSV).
std::size_t featurize(const RunConfig& cfg, Workspace& ws, bool csv);

// ---- pretraining ----

struct PretrainResult {
    cpc::CpcModel model;
    std::vector<cpc::EpochStats> curve;          // per epoch (central) or per round on dev (federated)
    std::vector<federation::RoundMetrics> rounds; // federated only
};

federation::GlobalModelState initial_pretrain_state(const RunConfig& cfg);
std::unique_ptr<federation::CpcTrainer> make_pretrain_client(const RunConfig& cfg, Workspace& ws, std::size_t index);
federation::RoundEvaluator pretrain_evaluator(const RunConfig& cfg, Workspace& ws,
                                              std::vector<cpc::EpochStats>* curve = nullptr);

// Central or in-process federated pretraining per cfg.mode. Writes cpc.fcw, pretrain_curve.csv
// and (federated) federation_metrics.csv to cfg.out_dir.
PretrainResult pretrain_cpc(const RunConfig& cfg, Workspace& ws);

// Ranking accuracy and loss on dev crops.
cpc::EpochStats evaluate_cpc(const RunConfig& cfg, Workspace& ws, cpc::CpcModel& model);

cpc::CpcModel load_cpc(const RunConfig& cfg, const std::filesystem::path& checkpoint);

// ---- downstream ----

struct TrainResult {
    classifier::DownstreamModel model;
    std::vector<classifier::EpochHistory> history; // central only
    std::vector<federation::RoundMetrics> rounds;   // per epoch (central) or per round (federated), on dev
    ParameterSet last;                              // weights after the final epoch or round
    std::uint64_t selected = 0;                     // epoch/round whose weights `model` holds
};

// Untrained downstream model of the configured kind; `encoder` is required for cpc features.
classifier::DownstreamModel build_downstream(const RunConfig& cfg, const cpc::CpcModel* encoder);
std::vector<classifier::LabeledExample> downstream_examples(const RunConfig& cfg, Workspace& ws,
                                                            classifier::DownstreamModel& model,
                                                            const std::vector<corpus::ManifestEntry>& entries);

federation::GlobalModelState initial_downstream_state(const RunConfig& cfg);
std::unique_ptr<federation::DownstreamTrainer> make_downstream_client(const RunConfig& cfg, Workspace& ws,
                                                                      std::size_t index);
federation::RoundEvaluator downstream_evaluator(const RunConfig& cfg, Workspace& ws);

// Central or in-process federated training per cfg.mode. Writes classifier.fcw (the best dev
// macro-F1 model, or the last one when select_best_dev is off), classifier_last.fcw and a
// per-epoch or per-round dev metrics CSV to cfg.out_dir.
TrainResult train_classifier(const RunConfig& cfg, Workspace& ws);

struct EvalResult {
    metrics::ConfusionMatrix cm;
    metrics::MetricsReport report;
    std::vector<classifier::Prediction> predictions;
    std::vector<corpus::ManifestEntry> entries;
};

EvalResult evaluate_classifier(const RunConfig& cfg, Workspace& ws, classifier::DownstreamModel& model,
                               corpus::Split split);
// Rebuilds a trained model from a run directory's config.ini and classifier.fcw.
classifier::DownstreamModel load_classifier(const RunConfig& cfg, const std::filesystem::path& checkpoint);
// metrics_<split>.csv/.svg and predictions_<split>.csv under `dir`.
void write_evaluation(const std::filesystem::path& dir, corpus::Split split, const EvalResult& r,
                      bool include_weighted);

// ---- separate-process federation ----

// Listens on cfg.host:cfg.port (0 = ephemeral; the bound port goes to out_dir/server.port),
// waits for plan.n_clients clients and runs the stage. Writes the same artifacts as the in-process run.
federation::GlobalModelState serve(const RunConfig& cfg, Workspace& ws, federation::Stage stage);
// Client `index` of the stage over TCP.
std::size_t run_tcp_client(const RunConfig& cfg, Workspace& ws, federation::Stage stage, std::size_t index,
                           std::uint16_t port);

federation::SessionOptions session_options(const RunConfig& cfg);

} // namespace fedcpc::app
