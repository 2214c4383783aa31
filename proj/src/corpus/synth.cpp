#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedcpc/core/error.hpp"
#include "fedcpc/corpus/corpus.hpp"

namespace fedcpc::corpus {

std::array<ClassProfile, 3> default_profiles() {
    return {{
        {0, {0.30, 0.15}, {3.0, 0.5}, {5.0, 0.5}},
        {1, {0.60, 0.15}, {2.0, 0.5}, {4.0, 0.5}},
        {2, {0.90, 0.15}, {1.2, 0.5}, {3.2, 0.5}},
    }};
}

std::array<ClassProfile, 3> profiles_with_separability(double separability) {
    auto p = default_profiles();
    auto pull = [&](auto member) {
        double center = 0;
        for (const auto& c : p) center += (c.*member).mean;
        center /= 3.0;
        for (auto& c : p) (c.*member).mean = center + separability * ((c.*member).mean - center);
    };
    pull(&ClassProfile::pause_rate);
    pull(&ClassProfile::pitch_var);
    pull(&ClassProfile::syllable_rate);
    return p;
}

SpeakerProfile draw_speaker(const std::string& id, Sex sex, const ClassProfile& cls, Rng& rng) {
    SpeakerProfile s;
    s.speaker_id = id;
    s.sex = sex;
    s.label = cls.label;
    if (sex == Sex::male) {
        s.base_f0 = rng.uniform(85.0, 155.0);
        s.formant_shift = rng.uniform(0.90, 1.00);
    } else {
        s.base_f0 = rng.uniform(165.0, 255.0);
        s.formant_shift = rng.uniform(1.05, 1.20);
    }
    s.pause_rate = std::max(0.02, rng.normal(cls.pause_rate.mean, cls.pause_rate.sd));
    s.pitch_var = std::max(0.2, rng.normal(cls.pitch_var.mean, cls.pitch_var.sd));
    s.syllable_rate = std::max(1.5, rng.normal(cls.syllable_rate.mean, cls.syllable_rate.sd));
    return s;
}

namespace {

constexpr double kPi = std::numbers::pi;
constexpr std::size_t kBlock = 80; // control-rate period in samples (5 ms at 16 kHz)
constexpr double kSnrDb = 30.0;
constexpr double kPauseNoiseDb = -20.0; // extra attenuation of the noise floor inside pauses
constexpr double kEnvelopeFloor = 0.2;

struct Vowel {
    double f1, f2, f3;
};
constexpr Vowel kVowels[] = {
    {730, 1090, 2440}, {270, 2290, 3010}, {300, 870, 2240}, {530, 1840, 2480}, {570, 840, 2410}, {660, 1720, 2410},
};

// Voiced runs last Exp(pause_rate) seconds; pauses 0.3-0.7 s.
std::vector<bool> voicing_mask(std::size_t n, int sr, double pause_rate, Rng& rng) {
    std::vector<bool> voiced(n, true);
    if (pause_rate <= 0) return voiced;
    // Start somewhere inside a voiced run so clips do not all begin with speech onset.
    std::size_t t = 0;
    double run = rng.exponential(pause_rate) * rng.uniform();
    while (t < n) {
        t += static_cast<std::size_t>(run * sr);
        const auto pause = static_cast<std::size_t>(rng.uniform(0.3, 0.7) * sr);
        for (std::size_t i = t; i < std::min(n, t + pause); ++i) voiced[i] = false;
        t += pause;
        run = std::max(0.15, rng.exponential(pause_rate));
    }
    return voiced;
}

} // namespace

SynthDetail synth_utterance_detailed(const SpeakerProfile& sp, double duration_s, Rng& rng) {
    if (duration_s < kClipSeconds) throw InsufficientAudio("synthesized utterances must last at least 6 s");
    const int sr = dsp::kDefaultSampleRate;
    const auto n = static_cast<std::size_t>(std::llround(duration_s * sr));
    SynthDetail out;
    out.voiced = voicing_mask(n, sr, sp.pause_rate, rng);
    std::vector<double> clean(n, 0.0);

    // Pitch: Ornstein-Uhlenbeck walk in semitones with stationary sd pitch_var.
    const double tau = 0.25, dt = static_cast<double>(kBlock) / sr;
    const double decay = std::exp(-dt / tau), kick = sp.pitch_var * std::sqrt(1 - decay * decay);
    double semis = sp.pitch_var > 0 ? rng.normal(0.0, sp.pitch_var) : 0.0;

    double phase = 0, syl_phase = rng.uniform(), syl_rate = sp.syllable_rate;
    Vowel target = kVowels[rng.index(std::size(kVowels))], formant = target;
    const double smooth = std::exp(-dt / 0.03);
    std::vector<double> amp;

    for (std::size_t b0 = 0; b0 < n; b0 += kBlock) {
        const std::size_t b1 = std::min(n, b0 + kBlock);
        const double f0_start = sp.base_f0 * std::exp2(semis / 12.0);
        if (sp.pitch_var > 0) semis = semis * decay + kick * rng.normal();
        const double f0_end = sp.base_f0 * std::exp2(semis / 12.0);

        formant.f1 = smooth * formant.f1 + (1 - smooth) * target.f1 * sp.formant_shift;
        formant.f2 = smooth * formant.f2 + (1 - smooth) * target.f2 * sp.formant_shift;
        formant.f3 = smooth * formant.f3 + (1 - smooth) * target.f3 * sp.formant_shift;

        // Harmonic weights: resonances at the formants over a 1/h tilt, plus a floor so
        // the fundamental is always present.
        const double f0_mid = 0.5 * (f0_start + f0_end);
        const auto harmonics = static_cast<std::size_t>(7500.0 / f0_mid);
        amp.assign(harmonics + 1, 0.0);
        for (std::size_t h = 1; h <= harmonics; ++h) {
            const double f = static_cast<double>(h) * f0_mid;
            auto res = [f](double fc, double bw) { return 1.0 / (1.0 + ((f - fc) / bw) * ((f - fc) / bw)); };
            amp[h] = (0.3 + res(formant.f1, 90) + 0.6 * res(formant.f2, 110) + 0.3 * res(formant.f3, 170)) /
                     static_cast<double>(h);
        }

        for (std::size_t i = b0; i < b1; ++i) {
            const double frac = static_cast<double>(i - b0) / static_cast<double>(kBlock);
            const double f0 = f0_start + (f0_end - f0_start) * frac;
            phase += 2 * kPi * f0 / sr;
            if (phase > 2 * kPi) phase -= 2 * kPi;
            syl_phase += syl_rate / sr;
            if (syl_phase >= 1.0) {
                syl_phase -= 1.0;
                syl_rate = sp.syllable_rate * rng.uniform(0.9, 1.1);
                target = kVowels[rng.index(std::size(kVowels))];
            }
            if (!out.voiced[i]) continue;
            // sin(h*phase) by the Chebyshev recurrence.
            const double c2 = 2 * std::cos(phase);
            double s_prev = 0, s_cur = std::sin(phase), acc = 0;
            for (std::size_t h = 1; h <= harmonics; ++h) {
                acc += amp[h] * s_cur;
                const double s_next = c2 * s_cur - s_prev;
                s_prev = s_cur;
                s_cur = s_next;
            }
            const double env = std::sin(kPi * syl_phase);
            clean[i] = acc * (kEnvelopeFloor + (1 - kEnvelopeFloor) * env * env);
        }
    }

    // 10 ms raised-cosine ramps at voicing edges.
    const std::size_t ramp = static_cast<std::size_t>(sr / 100);
    std::vector<std::size_t> to_edge(n, ramp);
    for (std::size_t i = 0, d = ramp; i < n; ++i) {
        d = out.voiced[i] ? std::min(ramp, d + 1) : 0;
        to_edge[i] = d;
    }
    for (std::size_t i = n, d = ramp; i-- > 0;) {
        d = out.voiced[i] ? std::min(ramp, d + 1) : 0;
        to_edge[i] = std::min(to_edge[i], d);
    }
    for (std::size_t i = 0; i < n; ++i)
        if (out.voiced[i] && to_edge[i] < ramp)
            clean[i] *= 0.5 - 0.5 * std::cos(kPi * static_cast<double>(to_edge[i]) / static_cast<double>(ramp));

    double voiced_energy = 0;
    std::size_t voiced_count = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (out.voiced[i]) {
            voiced_energy += clean[i] * clean[i];
            ++voiced_count;
        }
    const double voiced_rms = voiced_count ? std::sqrt(voiced_energy / voiced_count) : 1.0;
    const double noise_sd = voiced_rms * std::pow(10.0, -kSnrDb / 20.0);
    const double pause_gain = std::pow(10.0, kPauseNoiseDb / 20.0);
    double peak = 0;
    for (std::size_t i = 0; i < n; ++i) {
        clean[i] += noise_sd * (out.voiced[i] ? 1.0 : pause_gain) * rng.normal();
        peak = std::max(peak, std::abs(clean[i]));
    }
    const double gain = peak > 0 ? 0.9 / peak : 0.0;
    out.wave.sample_rate = sr;
    out.wave.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) out.wave.samples[i] = static_cast<float>(clean[i] * gain);
    return out;
}

dsp::Waveform synth_utterance(const SpeakerProfile& speaker, double duration_s, Rng& rng) {
    return synth_utterance_detailed(speaker, duration_s, rng).wave;
}

std::vector<dsp::Waveform> segment_6s(const dsp::Waveform& wave) {
    const auto clip = static_cast<std::size_t>(std::llround(kClipSeconds * wave.sample_rate));
    if (wave.samples.size() < clip) throw InsufficientAudio("segmentation needs at least 6 s of audio");
    std::vector<dsp::Waveform> out;
    for (std::size_t start = 0; start + clip <= wave.samples.size(); start += clip) {
        dsp::Waveform w;
        w.sample_rate = wave.sample_rate;
        w.samples.assign(wave.samples.begin() + static_cast<std::ptrdiff_t>(start),
                         wave.samples.begin() + static_cast<std::ptrdiff_t>(start + clip));
        out.push_back(std::move(w));
    }
    return out;
}

} // namespace fedcpc::corpus
