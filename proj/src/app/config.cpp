#include "fedcpc/app/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace fedcpc::app {

const char* mode_name(Mode m) { return m == Mode::central ? "central" : "federated"; }
const char* features_name(Features f) { return f == Features::mfcc ? "mfcc" : "cpc"; }
const char* head_name(classifier::Head h) { return h == classifier::Head::cnn ? "cnn" : "cnn-lstm"; }

Mode parse_mode(const std::string& s) {
    if (s == "central") return Mode::central;
    if (s == "federated") return Mode::federated;
    throw ConfigError("mode must be central or federated, got '" + s + "'");
}

Features parse_features(const std::string& s) {
    if (s == "mfcc") return Features::mfcc;
    if (s == "cpc") return Features::cpc;
    throw ConfigError("features must be mfcc or cpc, got '" + s + "'");
}

classifier::Head parse_head(const std::string& s) {
    if (s == "cnn") return classifier::Head::cnn;
    if (s == "cnn-lstm") return classifier::Head::cnn_lstm;
    throw ConfigError("head must be cnn or cnn-lstm, got '" + s + "'");
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || ptr != end || v.empty())
        throw ConfigError("invalid value '" + v + "' for " + key);
    if constexpr (std::is_floating_point_v<T>)
        if (!std::isfinite(out)) throw ConfigError("non-finite value for " + key);
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("invalid boolean '" + v + "' for " + key);
}

DType parse_dtype(const std::string& key, const std::string& v) {
    if (v == "f32") return DType::f32;
    if (v == "f64") return DType::f64;
    throw ConfigError("dtype for " + key + " must be f32 or f64, got '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
    std::vector<T> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_number<T>(key, trim(item)));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if constexpr (std::is_floating_point_v<T>) out += (i ? "," : "") + fmt(v[i]);
        else out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
}

struct Key {
    std::string name;
    std::string help;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

#define FEDCPC_SIZE(NAME, HELP, EXPR)                                                                       \
    Key {                                                                                                   \
        NAME, HELP, [](const RunConfig& c) { return std::to_string(c.EXPR); },                             \
            [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<std::size_t>(NAME, v); }        \
    }
#define FEDCPC_REAL(NAME, HELP, EXPR)                                                                       \
    Key {                                                                                                   \
        NAME, HELP, [](const RunConfig& c) { return fmt(c.EXPR); },                                         \
            [](RunConfig& c, const std::string& v) { c.EXPR = parse_number<double>(NAME, v); }              \
    }
#define FEDCPC_BOOL(NAME, HELP, EXPR)                                                                       \
    Key {                                                                                                   \
        NAME, HELP, [](const RunConfig& c) { return std::string(c.EXPR ? "true" : "false"); },             \
            [](RunConfig& c, const std::string& v) { c.EXPR = parse_bool(NAME, v); }                        \
    }
#define FEDCPC_DTYPE(NAME, HELP, EXPR)                                                                      \
    Key {                                                                                                   \
        NAME, HELP, [](const RunConfig& c) { return to_string(c.EXPR); },                                   \
            [](RunConfig& c, const std::string& v) { c.EXPR = parse_dtype(NAME, v); }                       \
    }

const std::vector<Key>& keys() {
    static const std::vector<Key> table{
        {"run.seed", "master seed (FEDCPC_SEED overrides)", [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("run.seed", v); }},
        {"run.data_dir", "corpus directory (manifest.jsonl, wav/, mfcc/)",
         [](const RunConfig& c) { return c.data_dir.string(); },
         [](RunConfig& c, const std::string& v) { c.data_dir = v; }},
        {"run.out_dir", "run output directory", [](const RunConfig& c) { return c.out_dir.string(); },
         [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        {"run.mode", "central | federated", [](const RunConfig& c) { return std::string(mode_name(c.mode)); },
         [](RunConfig& c, const std::string& v) { c.mode = parse_mode(v); }},
        {"run.transport", "inprocess | tcp",
         [](const RunConfig& c) { return std::string(c.transport == Transport::tcp ? "tcp" : "inprocess"); },
         [](RunConfig& c, const std::string& v) {
             if (v == "tcp") c.transport = Transport::tcp;
             else if (v == "inprocess") c.transport = Transport::inprocess;
             else throw ConfigError("transport must be inprocess or tcp, got '" + v + "'");
         }},

        FEDCPC_SIZE("corpus.speakers_per_class", "speakers generated per class", corpus.speakers_per_class),
        FEDCPC_REAL("corpus.female_fraction", "fraction of female speakers per class", corpus.female_fraction),
        FEDCPC_SIZE("corpus.utterances_per_speaker", "mean 6 s clips per speaker", corpus.utterances_per_speaker),
        {"corpus.class_ratio", "HC,MCI,AD clip shares",
         [](const RunConfig& c) { return join(std::vector<double>(c.corpus.class_ratio.begin(), c.corpus.class_ratio.end())); },
         [](RunConfig& c, const std::string& v) {
             auto r = parse_list<double>("corpus.class_ratio", v);
             if (r.size() != 3) throw ConfigError("corpus.class_ratio needs three values");
             std::copy(r.begin(), r.end(), c.corpus.class_ratio.begin());
         }},
        FEDCPC_SIZE("corpus.dev_speakers_per_class", "development speakers per class", corpus.dev_speakers_per_class),
        FEDCPC_SIZE("corpus.test_speakers_per_class", "test speakers per class", corpus.test_speakers_per_class),
        FEDCPC_REAL("corpus.separability", "0 = identical classes, 1 = default profiles", corpus.separability),

        FEDCPC_SIZE("cpc.conv_channels", "channels of every encoder conv layer", cpc.conv_channels),
        FEDCPC_SIZE("cpc.context_dim", "GRU context width", cpc.context_dim),
        FEDCPC_SIZE("cpc.prediction_steps", "future frames predicted (K)", cpc.prediction_steps),
        FEDCPC_SIZE("cpc.crop_length", "samples per training crop", cpc.crop_length),
        FEDCPC_SIZE("cpc.negatives", "negatives per prediction", cpc.negatives),
        FEDCPC_REAL("cpc.lr", "Adam learning rate", cpc.lr),
        FEDCPC_SIZE("cpc.batch_size", "crops per optimizer step", cpc.batch_size),
        FEDCPC_SIZE("cpc.epochs", "centralized pretraining epochs", cpc.epochs),
        FEDCPC_BOOL("cpc.channel_norm", "per-frame channel normalization in the encoder", cpc.channel_norm),
        FEDCPC_DTYPE("cpc.dtype", "f32 | f64", cpc.dtype),

        {"classifier.features", "mfcc | cpc",
         [](const RunConfig& c) { return std::string(features_name(c.features)); },
         [](RunConfig& c, const std::string& v) { c.features = parse_features(v); }},
        {"classifier.head", "cnn | cnn-lstm", [](const RunConfig& c) { return std::string(head_name(c.head)); },
         [](RunConfig& c, const std::string& v) { c.head = parse_head(v); }},
        FEDCPC_BOOL("classifier.finetune", "train the CPC encoder with the classifier", finetune),
        {"classifier.encoder", "pretrained CPC checkpoint (features = cpc)",
         [](const RunConfig& c) { return c.encoder.string(); },
         [](RunConfig& c, const std::string& v) { c.encoder = v; }},
        FEDCPC_SIZE("classifier.input_time", "frames fed to the classifier", classifier.input_time),
        {"classifier.conv_filters", "five conv widths",
         [](const RunConfig& c) { return join(c.classifier.conv_filters); },
         [](RunConfig& c, const std::string& v) {
             c.classifier.conv_filters = parse_list<std::size_t>("classifier.conv_filters", v);
         }},
        FEDCPC_SIZE("classifier.kernel", "conv kernel size", classifier.kernel),
        FEDCPC_SIZE("classifier.fc_width", "width of both dense layers", classifier.fc_width),
        FEDCPC_SIZE("classifier.lstm_layers", "LSTM layers of the cnn-lstm head", classifier_lstm_layers),
        FEDCPC_SIZE("classifier.lstm_hidden", "LSTM hidden size", classifier.lstm_hidden),
        FEDCPC_SIZE("classifier.batch_size", "examples per optimizer step", classifier.batch_size),
        FEDCPC_REAL("classifier.lr", "Adam learning rate", classifier_lr),
        FEDCPC_SIZE("classifier.epochs", "centralized training epochs", classifier_epochs),
        FEDCPC_BOOL("classifier.select_best_dev", "keep the epoch or round with the best dev macro-F1",
                    select_best_dev),
        FEDCPC_DTYPE("classifier.dtype", "f32 | f64", classifier.dtype),

        FEDCPC_SIZE("federation.clients", "clients M (also the corpus partition)", plan.n_clients),
        FEDCPC_SIZE("federation.rounds", "federated rounds S", plan.rounds),
        FEDCPC_SIZE("federation.local_epochs", "local epochs E per round", plan.local_epochs),
        {"federation.host", "server address for tcp", [](const RunConfig& c) { return c.host; },
         [](RunConfig& c, const std::string& v) { c.host = v; }},
        {"federation.port", "server port for tcp", [](const RunConfig& c) { return std::to_string(c.port); },
         [](RunConfig& c, const std::string& v) { c.port = parse_number<std::uint16_t>("federation.port", v); }},
        FEDCPC_REAL("federation.round_timeout_s", "seconds to wait for all updates of a round", round_timeout_s),
        FEDCPC_SIZE("federation.max_frame_mib", "largest accepted wire frame", max_frame_mib),
    };
    return table;
}

} // namespace

classifier::ClassifierConfig RunConfig::resolved_classifier() const {
    auto c = classifier;
    c.lstm_layers = head == classifier::Head::cnn_lstm ? classifier_lstm_layers : 0;
    c.input_dim = features == Features::mfcc ? 20 : cpc.context_dim;
    return c;
}

void RunConfig::validate() const {
    corpus.validate();
    cpc.validate();
    resolved_classifier().validate();
    plan.validate();
    if (head == classifier::Head::cnn_lstm && classifier_lstm_layers == 0)
        throw ConfigError("the cnn-lstm head needs classifier.lstm_layers >= 1");
    if (classifier_lr < 0 || cpc.lr < 0) throw ConfigError("learning rates must be non-negative");
    if (round_timeout_s <= 0) throw ConfigError("federation.round_timeout_s must be positive");
    if (max_frame_mib == 0 || max_frame_mib > 4095) throw ConfigError("federation.max_frame_mib must be in 1..4095");
}

std::map<std::string, std::string> parse_ini(std::istream& is, const std::string& source) {
    std::map<std::string, std::string> out;
    std::string line, section;
    for (int lineno = 1; std::getline(is, line); ++lineno) {
        const auto hash = line.find_first_of("#;");
        line = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
        if (section.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": key outside a section");
        out[section + "." + key] = trim(line.substr(eq + 1));
    }
    return out;
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& k : keys())
        if (k.name == key) {
            k.set(cfg, value);
            return;
        }
    throw ConfigError("unknown config key '" + key + "'");
}

void apply_ini_file(RunConfig& cfg, const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    for (const auto& [k, v] : parse_ini(is, path.string())) apply_setting(cfg, k, v);
}

void write_resolved(std::ostream& os, const RunConfig& cfg) {
    std::string section;
    for (const auto& k : keys()) {
        const auto dot = k.name.find('.');
        const auto s = k.name.substr(0, dot);
        if (s != section) {
            os << (section.empty() ? "" : "\n") << '[' << s << "]\n";
            section = s;
        }
        os << k.name.substr(dot + 1) << " = " << k.get(cfg) << '\n';
    }
}

void write_resolved(const std::filesystem::path& path, const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    write_resolved(os, cfg);
}

std::vector<KeyHelp> config_keys() {
    std::vector<KeyHelp> out;
    for (const auto& k : keys()) out.push_back({k.name, k.help});
    return out;
}

} // namespace fedcpc::app
