#pragma once

#include <filesystem>
#include <vector>

namespace fedcpc::dsp {

constexpr int kDefaultSampleRate = 16000;

struct Waveform {
    std::vector<float> samples; // in [-1, 1]
    int sample_rate = kDefaultSampleRate;

    double duration_seconds() const { return static_cast<double>(samples.size()) / sample_rate; }
};

// Mono 16-bit PCM RIFF/WAVE, little-endian. Samples map to int16 as round(x * 32767).
void write_wav(const std::filesystem::path& path, const Waveform& wave);
Waveform read_wav(const std::filesystem::path& path);

// What write_wav followed by read_wav would return.
std::vector<float> quantize_pcm16(const std::vector<float>& samples);

} // namespace fedcpc::dsp
