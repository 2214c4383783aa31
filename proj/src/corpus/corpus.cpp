#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "fedcpc/core/error.hpp"
#include "fedcpc/corpus/corpus.hpp"
#include "json.hpp"

namespace fedcpc::corpus {

namespace {

const char* kClassNames[3] = {"HC", "MCI", "AD"};

std::string padded(std::size_t v, int width) {
    std::string s = std::to_string(v);
    return std::string(width > static_cast<int>(s.size()) ? width - s.size() : 0, '0') + s;
}

} // namespace

const char* split_name(Split s) {
    switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "dev") return Split::dev;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split '" + s + "'");
}

std::string client_name(std::size_t index) { return "client" + std::to_string(index); }

void CorpusManifest::validate() const {
    std::map<std::string, Split> split_of;
    std::map<std::string, std::optional<std::string>> client_of;
    std::map<std::string, int> label_of;
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (!ids.insert(e.utterance_id).second) throw ConfigError("duplicate utterance id " + e.utterance_id);
        if (e.label < 0 || e.label > 2) throw ConfigError("label out of range for " + e.utterance_id);
        auto [s, new_s] = split_of.emplace(e.speaker_id, e.split);
        if (!new_s && s->second != e.split) throw ConfigError("speaker " + e.speaker_id + " appears in two splits");
        auto [c, new_c] = client_of.emplace(e.speaker_id, e.client_id);
        if (!new_c && c->second != e.client_id) throw ConfigError("speaker " + e.speaker_id + " appears in two clients");
        auto [l, new_l] = label_of.emplace(e.speaker_id, e.label);
        if (!new_l && l->second != e.label) throw ConfigError("speaker " + e.speaker_id + " has two labels");
        if (e.client_id && e.split != Split::train)
            throw ConfigError(e.utterance_id + " is assigned to a client but not in the training split");
    }
}

std::vector<const ManifestEntry*> CorpusManifest::select(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.split == split) out.push_back(&e);
    return out;
}

std::vector<const ManifestEntry*> CorpusManifest::client(const std::string& client_id) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries)
        if (e.client_id == client_id) out.push_back(&e);
    return out;
}

std::vector<std::string> CorpusManifest::client_ids() const {
    std::set<std::string> ids;
    for (const auto& e : entries)
        if (e.client_id) ids.insert(*e.client_id);
    return {ids.begin(), ids.end()};
}

void write_manifest(const std::filesystem::path& path, const CorpusManifest& m) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    for (const auto& e : m.entries) {
        nlohmann::ordered_json j;
        j["utterance_id"] = e.utterance_id;
        j["wav_path"] = e.wav_path;
        j["label"] = kClassNames[e.label];
        j["speaker_id"] = e.speaker_id;
        j["split"] = split_name(e.split);
        j["client_id"] = e.client_id ? nlohmann::ordered_json(*e.client_id) : nlohmann::ordered_json(nullptr);
        os << j.dump() << '\n';
    }
    if (!os) throw IoError("failed writing " + path.string());
}

CorpusManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read manifest " + path.string());
    CorpusManifest m;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ManifestEntry e;
            e.utterance_id = j.at("utterance_id").get<std::string>();
            e.wav_path = j.at("wav_path").get<std::string>();
            const auto label = j.at("label").get<std::string>();
            const auto it = std::find(std::begin(kClassNames), std::end(kClassNames), label);
            if (it == std::end(kClassNames)) throw ConfigError("unknown label '" + label + "'");
            e.label = static_cast<int>(it - std::begin(kClassNames));
            e.speaker_id = j.at("speaker_id").get<std::string>();
            e.split = parse_split(j.at("split").get<std::string>());
            if (j.contains("client_id") && !j["client_id"].is_null()) e.client_id = j["client_id"].get<std::string>();
            m.entries.push_back(std::move(e));
        } catch (const nlohmann::json::exception& ex) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return m;
}

void CorpusSpec::validate() const {
    if (clients == 0) throw ConfigError("at least one client is required");
    if (dev_speakers_per_class == 0 || test_speakers_per_class == 0)
        throw ConfigError("dev and test need at least one speaker per class");
    if (speakers_per_class < clients + dev_speakers_per_class + test_speakers_per_class)
        throw ConfigError("need at least " + std::to_string(clients + dev_speakers_per_class + test_speakers_per_class) +
                          " speakers per class for " + std::to_string(clients) +
                          " clients plus dev and test, got " + std::to_string(speakers_per_class));
    if (utterances_per_speaker == 0) throw ConfigError("utterances_per_speaker must be positive");
    if (separability < 0) throw ConfigError("separability must be non-negative");
    if (female_fraction < 0 || female_fraction > 1) throw ConfigError("female_fraction must lie in [0, 1]");
    double sum = 0;
    for (double r : class_ratio) {
        if (r <= 0) throw ConfigError("class ratios must be positive");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("class ratios must sum to 1");
}

std::array<std::size_t, 3> CorpusSpec::class_totals() const {
    const double total = static_cast<double>(3 * speakers_per_class * utterances_per_speaker);
    std::array<std::size_t, 3> out{};
    std::array<double, 3> frac{};
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < 3; ++c) {
        const double exact = total * class_ratio[c];
        out[c] = static_cast<std::size_t>(std::floor(exact));
        frac[c] = exact - std::floor(exact);
        assigned += out[c];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < static_cast<std::size_t>(total); ++i, ++assigned) ++out[order[i % 3]];
    for (auto& v : out) v = std::max(v, speakers_per_class); // every speaker keeps at least one clip
    return out;
}

CorpusManifest partition_clients(const CorpusManifest& m, std::size_t clients, std::uint64_t seed) {
    if (clients == 0) throw ConfigError("at least one client is required");
    std::array<std::vector<std::string>, 3> speakers;
    for (const auto& e : m.entries) {
        if (e.split != Split::train) continue;
        auto& v = speakers[e.label];
        if (std::find(v.begin(), v.end(), e.speaker_id) == v.end()) v.push_back(e.speaker_id);
    }
    std::map<std::string, std::size_t> assignment;
    Rng rng(seed);
    std::size_t next = 0;
    for (auto& v : speakers) {
        if (v.size() < clients)
            throw ConfigError("a class has " + std::to_string(v.size()) + " training speakers, fewer than " +
                              std::to_string(clients) + " clients");
        std::sort(v.begin(), v.end());
        rng.shuffle(v.begin(), v.end());
        // The deal continues across classes so client sizes stay within one speaker.
        for (const auto& s : v) assignment[s] = next++ % clients;
    }
    CorpusManifest out = m;
    for (auto& e : out.entries) {
        e.client_id.reset();
        if (e.split == Split::train) e.client_id = client_name(assignment.at(e.speaker_id));
    }
    return out;
}

CorpusManifest gen_corpus(const CorpusSpec& spec, const std::filesystem::path& root) {
    spec.validate();
    const auto profiles = profiles_with_separability(spec.separability);
    const auto totals = spec.class_totals();
    const std::size_t S = spec.speakers_per_class;
    const auto n_female = static_cast<std::size_t>(std::lround(spec.female_fraction * static_cast<double>(S)));

    struct Job {
        SpeakerProfile speaker;
        std::size_t clips;
        Split split;
    };
    std::vector<Job> jobs;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<std::size_t> order(S);
        std::iota(order.begin(), order.end(), 0);
        Rng split_rng(derive_seed(spec.seed, std::string("split:") + kClassNames[c]));
        split_rng.shuffle(order.begin(), order.end());
        std::vector<Split> split_of(S, Split::train);
        for (std::size_t i = 0; i < S; ++i) {
            if (i < spec.dev_speakers_per_class) split_of[order[i]] = Split::dev;
            else if (i < spec.dev_speakers_per_class + spec.test_speakers_per_class) split_of[order[i]] = Split::test;
        }
        for (std::size_t i = 0; i < S; ++i) {
            const std::string id = std::string(kClassNames[c]) + "-" + padded(i, 2);
            Rng rng(derive_seed(spec.seed, "speaker:" + id));
            const Sex sex = i < n_female ? Sex::female : Sex::male;
            const std::size_t clips = totals[c] / S + (i < totals[c] % S ? 1 : 0);
            jobs.push_back({draw_speaker(id, sex, profiles[c], rng), clips, split_of[i]});
        }
    }

    std::filesystem::create_directories(root / "wav");
    std::vector<std::vector<ManifestEntry>> per_job(jobs.size());
    std::vector<std::string> failures(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        try {
            const Job& job = jobs[j];
            Rng rng(derive_seed(spec.seed, "recording:" + job.speaker.speaker_id));
            // A long recording whose trailing remainder (< 6 s) is dropped by segmentation.
            const double seconds = kClipSeconds * static_cast<double>(job.clips) + rng.uniform(0.0, 5.0);
            const auto recording = synth_utterance(job.speaker, seconds, rng);
            const auto clips = segment_6s(recording);
            for (std::size_t k = 0; k < job.clips; ++k) {
                ManifestEntry e;
                e.utterance_id = job.speaker.speaker_id + "_" + padded(k, 3);
                e.wav_path = "wav/" + e.utterance_id + ".wav";
                e.label = job.speaker.label;
                e.speaker_id = job.speaker.speaker_id;
                e.split = job.split;
                dsp::write_wav(root / e.wav_path, clips[k]);
                per_job[j].push_back(std::move(e));
            }
        } catch (const std::exception& ex) {
            failures[j] = ex.what();
        }
    }
    for (const auto& f : failures)
        if (!f.empty()) throw IoError("corpus generation failed: " + f);

    CorpusManifest m;
    for (auto& v : per_job)
        for (auto& e : v) m.entries.push_back(std::move(e));
    m = partition_clients(m, spec.clients, derive_seed(spec.seed, "clients"));
    m.validate();
    write_manifest(root / "manifest.jsonl", m);
    return m;
}

} // namespace fedcpc::corpus
