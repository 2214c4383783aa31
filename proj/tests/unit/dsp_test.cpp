#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "fedcpc/core/error.hpp"
#include "fedcpc/dsp/mfcc.hpp"
#include "oracles.hpp"

using namespace fedcpc;
using namespace fedcpc::dsp;
using fedcpc::oracles::oracle_cepstra;

namespace {

constexpr double kPi = std::numbers::pi;

Waveform noise_wave(std::size_t n, unsigned seed, float amp = 0.3f) {
    std::mt19937 gen(seed);
    std::uniform_real_distribution<float> d(-amp, amp);
    Waveform w;
    w.samples.resize(n);
    for (auto& s : w.samples) s = d(gen);
    return w;
}

Waveform tone(double hz, std::size_t n, double amp = 0.5) {
    Waveform w;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = static_cast<float>(amp * std::sin(2 * kPi * hz * i / 16000.0));
    return w;
}

} // namespace

TEST(Dsp, FrameCountSixSeconds) { EXPECT_EQ(frame_count(96000), 598u); }

TEST(Dsp, FrameCountSingleWindow) { EXPECT_EQ(frame_count(400), 1u); }

TEST(Dsp, FrameCountClosedForm) {
    for (std::size_t n = 400; n < 2400; n += 7) EXPECT_EQ(frame_count(n), (n - 400) / 160 + 1);
    EXPECT_EQ(frame_and_window(noise_wave(1337, 2)).size(), (1337u - 400) / 160 + 1);
}

TEST(Dsp, TooShortThrows) {
    EXPECT_THROW(frame_count(399), InsufficientAudio);
    EXPECT_THROW(mfcc(noise_wave(399, 1)), InsufficientAudio);
}

TEST(Dsp, ConstantSignalFramesIdentical) {
    Waveform w;
    w.samples.assign(2000, 0.25f);
    const auto frames = frame_and_window(w);
    ASSERT_EQ(frames.size(), 11u);
    for (const auto& f : frames) EXPECT_EQ(f, frames[0]);
    EXPECT_EQ(frames[0].size(), 400u);
}

TEST(Dsp, FftMatchesDirectDft) {
    std::mt19937 gen(5);
    std::normal_distribution<double> d;
    std::vector<std::complex<double>> x(64);
    for (auto& v : x) v = {d(gen), d(gen)};
    auto y = x;
    fft(y);
    for (int k = 0; k < 64; ++k) {
        std::complex<double> s;
        for (int n = 0; n < 64; ++n) s += x[n] * std::polar(1.0, -2 * kPi * k * n / 64);
        EXPECT_NEAR(std::abs(s - y[k]), 0.0, 1e-10);
    }
}

TEST(Dsp, MatchesBruteForceOracle) {
    for (unsigned seed : {1u, 2u, 3u}) {
        const auto w = noise_wave(400 + 160 * 6 + 37, seed);
        const auto expected = oracle_cepstra(w);
        MfccConfig cfg;
        cfg.normalize = false;
        const auto st = mfcc_stages(w, cfg);
        ASSERT_EQ(st.frames, expected.size());
        for (std::size_t t = 0; t < st.frames; ++t)
            for (int k = 0; k < 20; ++k) EXPECT_NEAR(st.cepstra[t][k], expected[t][k], 1e-8);
    }
}

TEST(Dsp, NormalizedMatchesOracleAfterStandardization) {
    const auto w = tone(440.0, 4000);
    auto ref = oracle_cepstra(noise_wave(4000, 9));
    const auto st = mfcc_stages(noise_wave(4000, 9));
    for (int k = 0; k < 20; ++k) {
        double mean = 0, var = 0;
        for (auto& r : ref) mean += r[k];
        mean /= ref.size();
        for (auto& r : ref) var += (r[k] - mean) * (r[k] - mean);
        const double sd = std::sqrt(var / ref.size());
        for (std::size_t t = 0; t < ref.size(); ++t) EXPECT_NEAR(st.normalized[t][k], (ref[t][k] - mean) / sd, 1e-6);
    }
    const auto m = mfcc(w);
    EXPECT_EQ(m.coefficients, 20u);
    EXPECT_EQ(m.values.size(), m.frames * 20);
}

TEST(Dsp, ToneEnergyPeaksInBracketingFilter) {
    // Filter m is centered at mel point m+1 of 28 evenly spaced points on [0, mel(8000)].
    const double mel_1k = 2595.0 * std::log10(1.0 + 1000.0 / 700.0);
    const double step = 2595.0 * std::log10(1.0 + 8000.0 / 700.0) / 27.0;
    const int lower = static_cast<int>(std::floor(mel_1k / step)) - 1; // filter with center just below 1 kHz
    MfccConfig cfg;
    cfg.normalize = false;
    const auto st = mfcc_stages(tone(1000.0, 4000), cfg);
    const auto fb = mel_filterbank(cfg);
    for (const auto& e : st.mel_energy) {
        const auto best = std::max_element(e.begin(), e.end()) - e.begin();
        EXPECT_TRUE(best == lower || best == lower + 1) << best;
        // The winner's triangle contains 1 kHz.
        EXPECT_GT(fb.weights[best][static_cast<std::size_t>(std::lround(1000.0 * 512 / 16000))], 0.0);
    }
    EXPECT_LE(fb.center_hz[lower], 1000.0);
    EXPECT_GE(fb.center_hz[lower + 1], 1000.0);
}

TEST(Dsp, SilenceGivesFlatCepstrum) {
    Waveform w;
    w.samples.assign(4000, 0.0f);
    MfccConfig cfg;
    cfg.normalize = false;
    const auto st = mfcc_stages(w, cfg);
    for (std::size_t t = 0; t < st.frames; ++t) {
        for (double v : st.log_mel[t]) EXPECT_DOUBLE_EQ(v, std::log(1e-10));
        for (int k = 1; k < 20; ++k) EXPECT_NEAR(st.cepstra[t][k], 0.0, 1e-12);
    }
    const auto m = mfcc(w); // constant coefficients are only centered
    for (float v : m.values) EXPECT_NEAR(v, 0.0f, 1e-12f);
}

TEST(Dsp, LogEnergiesShiftUnderScaling) {
    const auto w = noise_wave(3000, 11);
    Waveform scaled = w;
    const double alpha = 0.25;
    for (auto& s : scaled.samples) s = static_cast<float>(s * alpha);
    MfccConfig cfg;
    cfg.normalize = false;
    const auto a = mfcc_stages(w, cfg), b = mfcc_stages(scaled, cfg);
    for (std::size_t t = 0; t < a.frames; ++t)
        for (std::size_t m = 0; m < 26; ++m) EXPECT_NEAR(b.log_mel[t][m] - a.log_mel[t][m], 2 * std::log(alpha), 1e-6);
    const auto na = mfcc(w), nb = mfcc(scaled);
    for (std::size_t i = 0; i < na.values.size(); ++i) EXPECT_NEAR(na.values[i], nb.values[i], 1e-4);
}

TEST(Dsp, Deterministic) {
    const auto w = noise_wave(5000, 4);
    EXPECT_EQ(mfcc(w).values, mfcc(w).values);
}

TEST(Dsp, FilterbankShape) {
    const auto fb = mel_filterbank();
    ASSERT_EQ(fb.weights.size(), 26u);
    for (std::size_t m = 0; m < 26; ++m) {
        double peak = 0;
        for (double v : fb.weights[m]) {
            EXPECT_GE(v, 0.0);
            peak = std::max(peak, v);
        }
        EXPECT_DOUBLE_EQ(peak, 1.0);
        EXPECT_DOUBLE_EQ(fb.weights[m][fb.center_bin[m]], 1.0);
    }
}

TEST(Dsp, WavRoundTrip) {
    auto w = noise_wave(1234, 8, 0.9f);
    const auto path = std::filesystem::temp_directory_path() / "fedcpc_dsp_roundtrip.wav";
    write_wav(path, w);
    const auto r = read_wav(path);
    EXPECT_EQ(r.sample_rate, 16000);
    EXPECT_EQ(r.samples, quantize_pcm16(w.samples));
    for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32767);
    write_wav(path, r);
    EXPECT_EQ(read_wav(path).samples, r.samples);
    std::filesystem::remove(path);
    EXPECT_THROW(read_wav(path), IoError);
}
