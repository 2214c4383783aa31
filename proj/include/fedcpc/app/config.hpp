#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fedcpc/classifier/classifier.hpp"
#include "fedcpc/corpus/corpus.hpp"
#include "fedcpc/cpc/cpc.hpp"
#include "fedcpc/federation/fedavg.hpp"

namespace fedcpc::app {

enum class Mode { central, federated };
enum class Transport { inprocess, tcp };
enum class Features { mfcc, cpc };

// Everything a run needs. Defaults follow the published settings (512-channel encoder,
// 50 rounds x 4 local epochs, batch 128, 100 epochs); desk-scale runs override them.
struct RunConfig {
    std::uint64_t seed = 1;
    std::filesystem::path data_dir = "data";
    std::filesystem::path out_dir = "runs/default";
    Mode mode = Mode::central;
    Transport transport = Transport::inprocess;

    corpus::CorpusSpec corpus;
    cpc::CpcConfig cpc;

    Features features = Features::mfcc;
    classifier::Head head = classifier::Head::cnn_lstm;
    bool finetune = false;
    std::filesystem::path encoder; // pretrained CPC checkpoint for features = cpc
    classifier::ClassifierConfig classifier;
    std::size_t classifier_lstm_layers = 2; // used when head = cnn-lstm
    double classifier_lr = 1e-3;
    std::size_t classifier_epochs = 100;
    bool select_best_dev = true; // classifier.fcw holds the best dev epoch/round, classifier_last.fcw the last

    federation::FederationPlan plan;
    std::string host = "127.0.0.1";
    std::uint16_t port = 5757;
    double round_timeout_s = 7200;
    std::size_t max_frame_mib = 256;

    // The classifier config with head and input width resolved.
    classifier::ClassifierConfig resolved_classifier() const;
    void validate() const;
};

// Line-based `key = value` with `[section]` headers; `#` and `;` start comments.
// Returns "section.key" -> value. ConfigError (with the line number) on malformed lines.
std::map<std::string, std::string> parse_ini(std::istream& is, const std::string& source = "config");

// Applies one "section.key" setting; ConfigError for unknown keys or unparsable values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_ini_file(RunConfig& cfg, const std::filesystem::path& path);

// All keys with their current values, grouped by section; parse_ini of this reproduces cfg.
void write_resolved(std::ostream& os, const RunConfig& cfg);
void write_resolved(const std::filesystem::path& path, const RunConfig& cfg);

struct KeyHelp {
    std::string key;
    std::string help;
};
std::vector<KeyHelp> config_keys();

const char* mode_name(Mode m);
const char* features_name(Features f);
const char* head_name(classifier::Head h);
Mode parse_mode(const std::string& s);
Features parse_features(const std::string& s);
classifier::Head parse_head(const std::string& s);

} // namespace fedcpc::app
