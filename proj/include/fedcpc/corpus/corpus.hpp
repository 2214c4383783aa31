#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedcpc/core/rng.hpp"
#include "fedcpc/dsp/waveform.hpp"

namespace fedcpc::corpus {

struct Distribution {
    double mean = 0;
    double sd = 0;
};

struct ClassProfile {
    int label = 0;
    Distribution pause_rate;    // pauses per second
    Distribution pitch_var;     // semitone sd of the pitch contour
    Distribution syllable_rate; // Hz
};

// HC, MCI, AD at full separation.
std::array<ClassProfile, 3> default_profiles();
// Class means pulled towards their common center: 0 makes the classes identical in
// distribution, 1 gives the defaults, larger values push them further apart.
std::array<ClassProfile, 3> profiles_with_separability(double separability);

enum class Sex { male, female };

struct SpeakerProfile {
    std::string speaker_id;
    Sex sex = Sex::female;
    double base_f0 = 200;       // Hz
    double formant_shift = 1.0; // multiplies the vowel formants
    int label = 0;
    // The speaker's own draw from the class distributions.
    double pause_rate = 0;
    double pitch_var = 0;
    double syllable_rate = 4;
};

SpeakerProfile draw_speaker(const std::string& id, Sex sex, const ClassProfile& cls, Rng& rng);

// Voiced harmonic segments separated by pauses, with background noise, peak-normalized
// to 0.9. Rates come from the speaker's own draws; duration_s must be at least 6.
dsp::Waveform synth_utterance(const SpeakerProfile& speaker, double duration_s, Rng& rng);

struct SynthDetail {
    dsp::Waveform wave;
    std::vector<bool> voiced; // per sample: inside a voiced segment
};
SynthDetail synth_utterance_detailed(const SpeakerProfile& speaker, double duration_s, Rng& rng);

constexpr double kClipSeconds = 6.0;

// Consecutive non-overlapping 6 s clips; the remainder is dropped.
std::vector<dsp::Waveform> segment_6s(const dsp::Waveform& wave);

enum class Split { train, dev, test };
const char* split_name(Split s);
Split parse_split(const std::string& s);

struct ManifestEntry {
    std::string utterance_id;
    std::string wav_path; // relative to the corpus root
    int label = 0;
    std::string speaker_id;
    Split split = Split::train;
    std::optional<std::string> client_id;
};

struct CorpusManifest {
    std::vector<ManifestEntry> entries;

    // Throws ConfigError when a speaker sits in two splits or two clients.
    void validate() const;
    std::vector<const ManifestEntry*> select(Split split) const;
    std::vector<const ManifestEntry*> client(const std::string& client_id) const;
    std::vector<std::string> client_ids() const;
};

void write_manifest(const std::filesystem::path& path, const CorpusManifest& m);
CorpusManifest read_manifest(const std::filesystem::path& path);

struct CorpusSpec {
    std::size_t speakers_per_class = 10;
    double female_fraction = 0.58;
    std::size_t utterances_per_speaker = 12; // average; class totals follow class_ratio
    std::array<double, 3> class_ratio{0.40, 0.32, 0.28};
    std::size_t dev_speakers_per_class = 1;
    std::size_t test_speakers_per_class = 3;
    double separability = 0.7;
    std::size_t clients = 3;
    std::uint64_t seed = 1;

    void validate() const;
    // Clips per class: total * ratio, rounded, remainder to the largest fractional parts.
    std::array<std::size_t, 3> class_totals() const;
};

// Generates every speaker's recording, segments it, writes WAVs under root/wav and the
// manifest to root/manifest.jsonl, then deals training speakers to clients.
CorpusManifest gen_corpus(const CorpusSpec& spec, const std::filesystem::path& root);

// Training speakers of each class shuffled and dealt round-robin across `clients`.
CorpusManifest partition_clients(const CorpusManifest& m, std::size_t clients, std::uint64_t seed);

std::string client_name(std::size_t index);

} // namespace fedcpc::corpus
