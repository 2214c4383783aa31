#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "fedcpc/app/config.hpp"
#include "fedcpc/app/exit_codes.hpp"
#include "fedcpc/app/pipeline.hpp"
#include "fedcpc/federation/weights.hpp"

using namespace fedcpc;
using namespace fedcpc::app;

namespace {

struct Common {
    std::string config;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::string data;
    std::string out;
    std::string log_level = "info";
};

struct Knobs {
    std::string mode, features, head, encoder, stage, transport, host, split = "test", run;
    std::optional<std::size_t> clients, rounds, local_epochs, epochs, index;
    std::optional<std::uint16_t> port;
    bool finetune = false, csv = false, weighted = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_out) {
    cmd->add_option("--config", c.config, "key=value config file with [section] headers")->check(CLI::ExistingFile);
    cmd->add_option("--set", c.sets, "override one setting, e.g. --set cpc.epochs=20 (repeatable)");
    cmd->add_option("--seed", c.seed, "master seed (overrides FEDCPC_SEED and the config)");
    cmd->add_option("--data", c.data, "corpus directory");
    if (with_out) cmd->add_option("--out", c.out, "run output directory");
    cmd->add_option("--log-level", c.log_level, "trace | debug | info | warn | error")
        ->check(CLI::IsMember({"trace", "debug", "info", "warn", "error"}));
}

void add_plan(CLI::App* cmd, Knobs& k) {
    cmd->add_option("--clients", k.clients, "federated clients M");
    cmd->add_option("--rounds", k.rounds, "federated rounds S");
    cmd->add_option("--local-epochs", k.local_epochs, "local epochs E per round");
}

void add_downstream(CLI::App* cmd, Knobs& k) {
    cmd->add_option("--features", k.features, "mfcc | cpc")->check(CLI::IsMember({"mfcc", "cpc"}));
    cmd->add_option("--head", k.head, "cnn | cnn-lstm")->check(CLI::IsMember({"cnn", "cnn-lstm"}));
    cmd->add_option("--encoder", k.encoder, "pretrained CPC checkpoint (with --features cpc)");
    cmd->add_flag("--finetune", k.finetune, "train the CPC encoder together with the classifier");
}

void add_network(CLI::App* cmd, Knobs& k) {
    cmd->add_option("--host", k.host, "server address");
    cmd->add_option("--port", k.port, "server port (0 lets serve pick one, written to <out>/server.port)");
    cmd->add_option("--stage", k.stage, "pretrain | downstream")
        ->required()
        ->check(CLI::IsMember({"pretrain", "downstream"}));
}

RunConfig resolve(const Common& c, const Knobs& k, RunConfig cfg = {}) {
    if (!c.config.empty()) apply_ini_file(cfg, c.config);
    if (const char* env = std::getenv("FEDCPC_SEED")) apply_setting(cfg, "run.seed", env);
    for (const auto& s : c.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
        apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    if (c.seed) cfg.seed = *c.seed;
    if (!c.data.empty()) cfg.data_dir = c.data;
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (!k.mode.empty()) cfg.mode = parse_mode(k.mode);
    if (!k.features.empty()) cfg.features = parse_features(k.features);
    if (!k.head.empty()) cfg.head = parse_head(k.head);
    if (!k.encoder.empty()) cfg.encoder = k.encoder;
    if (k.finetune) cfg.finetune = true;
    if (!k.host.empty()) cfg.host = k.host;
    if (k.port) cfg.port = *k.port;
    if (k.clients) cfg.plan.n_clients = *k.clients;
    if (k.rounds) cfg.plan.rounds = *k.rounds;
    if (k.local_epochs) cfg.plan.local_epochs = *k.local_epochs;

    if (cfg.features == Features::mfcc && (k.finetune || !k.encoder.empty()))
        throw ConfigError("--finetune and --encoder only apply to --features cpc");
    if (cfg.mode == Mode::central && (k.rounds || k.local_epochs))
        throw ConfigError("--rounds and --local-epochs need --mode federated");
    return cfg;
}

void setup_logging(const Common& c, const std::filesystem::path& log_dir) {
    std::vector<spdlog::sink_ptr> sinks{std::make_shared<spdlog::sinks::stderr_color_sink_mt>()};
    if (!log_dir.empty()) {
        std::filesystem::create_directories(log_dir);
        sinks.push_back(std::make_shared<spdlog::sinks::basic_file_sink_mt>((log_dir / "run.log").string()));
    }
    auto logger = std::make_shared<spdlog::logger>("fedcpc", sinks.begin(), sinks.end());
    logger->set_level(spdlog::level::from_str(c.log_level));
    spdlog::set_default_logger(logger);
}

federation::Stage parse_stage(const std::string& s) {
    return s == "pretrain" ? federation::Stage::pretrain : federation::Stage::downstream;
}

void inspect(const std::string& path) {
    const auto p = federation::load_weights(path);
    std::cout << std::left << std::setw(34) << "name" << std::setw(6) << "dtype" << std::setw(18) << "shape"
              << std::right << std::setw(10) << "elements" << std::setw(14) << "min" << std::setw(14) << "max"
              << std::setw(14) << "mean" << '\n';
    std::size_t total = 0;
    for (const auto& [name, t] : p.entries()) {
        double lo = t.at(0), hi = t.at(0), sum = 0;
        for (std::size_t i = 0; i < t.numel(); ++i) {
            lo = std::min(lo, t.at(i));
            hi = std::max(hi, t.at(i));
            sum += t.at(i);
        }
        total += t.numel();
        std::cout << std::left << std::setw(34) << name << std::setw(6) << to_string(t.dtype()) << std::setw(18)
                  << to_string(t.shape()) << std::right << std::setw(10) << t.numel() << std::setprecision(6)
                  << std::setw(14) << lo << std::setw(14) << hi << std::setw(14) << sum / t.numel() << '\n';
    }
    std::cout << p.size() << " tensors, " << total << " elements\n";
}

std::string config_key_footer() {
    std::ostringstream os;
    os << "Config keys (for --config files as [section] key = value, or --set section.key=value):\n";
    for (const auto& k : config_keys()) os << "  " << std::left << std::setw(34) << k.key << k.help << '\n';
    os << "Environment: FEDCPC_SEED overrides run.seed from the config file.\n"
          "Exit codes: 0 ok, 1 other failure, 2 config error, 3 protocol error, 4 I/O error.";
    return os.str();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedcpc: federated CPC pretraining and federated speech classification"};
    app.footer(config_key_footer());
    app.require_subcommand(1);

    Common common;
    Knobs k;

    auto* gen = app.add_subcommand("gen-data", "synthesize the corpus and its manifest");
    add_common(gen, common, false);
    gen->add_option("--clients", k.clients, "clients the training speakers are dealt to");

    auto* feat = app.add_subcommand("featurize", "write MFCC tensors for every clip");
    add_common(feat, common, false);
    feat->add_flag("--csv", k.csv, "write CSV instead of the binary tensor format");

    auto* pre = app.add_subcommand("pretrain", "CPC pretraining (step 1)");
    add_common(pre, common, true);
    pre->add_option("--mode", k.mode, "central | federated")->check(CLI::IsMember({"central", "federated"}));
    pre->add_option("--epochs", k.epochs, "centralized epochs");
    add_plan(pre, k);

    auto* train = app.add_subcommand("train", "downstream classifier training (step 2)");
    add_common(train, common, true);
    train->add_option("--mode", k.mode, "central | federated")->check(CLI::IsMember({"central", "federated"}));
    train->add_option("--epochs", k.epochs, "centralized epochs");
    add_plan(train, k);
    add_downstream(train, k);

    auto* eval = app.add_subcommand("evaluate", "score a trained classifier: metrics CSV, confusion SVG, predictions");
    add_common(eval, common, true);
    eval->add_option("--run", k.run, "run directory holding config.ini and classifier.fcw")->required();
    eval->add_option("--split", k.split, "train | dev | test")->check(CLI::IsMember({"train", "dev", "test"}));
    eval->add_flag("--weighted", k.weighted, "also write support-weighted averages");

    auto* serve_cmd = app.add_subcommand("serve", "federation server over TCP");
    add_common(serve_cmd, common, true);
    add_network(serve_cmd, k);
    add_plan(serve_cmd, k);
    add_downstream(serve_cmd, k);

    auto* client_cmd = app.add_subcommand("client", "federation client over TCP");
    add_common(client_cmd, common, false);
    add_network(client_cmd, k);
    add_plan(client_cmd, k);
    add_downstream(client_cmd, k);
    client_cmd->add_option("--index", k.index, "client index (trains on the clips of client<index>)")->required();

    auto* insp = app.add_subcommand("inspect-weights", "print the tensors of a checkpoint");
    std::string weights_path;
    insp->add_option("file", weights_path, "checkpoint in the weights format")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : config_error;
    }

    try {
        if (insp->parsed()) {
            inspect(weights_path);
            return ok;
        }
        if (eval->parsed()) {
            RunConfig base;
            apply_ini_file(base, std::filesystem::path(k.run) / "config.ini");
            base.out_dir = k.run;
            auto cfg = resolve(common, k, base);
            setup_logging(common, cfg.out_dir);
            Workspace ws(cfg.data_dir);
            auto model = load_classifier(cfg, std::filesystem::path(k.run) / "classifier.fcw");
            const auto split = corpus::parse_split(k.split);
            const auto r = evaluate_classifier(cfg, ws, model, split);
            write_evaluation(cfg.out_dir, split, r, k.weighted);
            std::printf("%s: precision %s%% recall %s%% macro-F1 %s%% (%zu clips)\n", k.split.c_str(),
                        metrics::percent(r.report.macro.precision).c_str(),
                        metrics::percent(r.report.macro.recall).c_str(), metrics::percent(r.report.macro.f1).c_str(),
                        r.entries.size());
            return ok;
        }

        auto cfg = resolve(common, k);
        if (gen->parsed()) {
            setup_logging(common, {});
            const auto m = generate_corpus(cfg);
            std::printf("%zu clips in %s\n", m.entries.size(), cfg.data_dir.string().c_str());
        } else if (feat->parsed()) {
            setup_logging(common, {});
            Workspace ws(cfg.data_dir);
            std::printf("%zu feature files under %s\n", featurize(cfg, ws, k.csv), (cfg.data_dir / "mfcc").string().c_str());
        } else if (pre->parsed()) {
            if (k.epochs) cfg.cpc.epochs = *k.epochs;
            setup_logging(common, cfg.out_dir);
            Workspace ws(cfg.data_dir);
            pretrain_cpc(cfg, ws);
            std::printf("wrote %s\n", (cfg.out_dir / "cpc.fcw").string().c_str());
        } else if (train->parsed()) {
            if (k.epochs) cfg.classifier_epochs = *k.epochs;
            setup_logging(common, cfg.out_dir);
            Workspace ws(cfg.data_dir);
            train_classifier(cfg, ws);
            std::printf("wrote %s\n", (cfg.out_dir / "classifier.fcw").string().c_str());
        } else if (serve_cmd->parsed()) {
            cfg.mode = Mode::federated;
            cfg.transport = Transport::tcp;
            setup_logging(common, cfg.out_dir);
            Workspace ws(cfg.data_dir);
            const auto final_state = serve(cfg, ws, parse_stage(k.stage));
            std::printf("%zu rounds done, wrote %s\n", static_cast<std::size_t>(final_state.round),
                        cfg.out_dir.string().c_str());
        } else if (client_cmd->parsed()) {
            cfg.mode = Mode::federated;
            cfg.transport = Transport::tcp;
            setup_logging(common, {});
            Workspace ws(cfg.data_dir);
            const auto served = run_tcp_client(cfg, ws, parse_stage(k.stage), *k.index, cfg.port);
            std::printf("client%zu served %zu rounds\n", *k.index, served);
        }
        return ok;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "fedcpc: %s\n", e.what());
        return exit_code_for(e);
    }
}
