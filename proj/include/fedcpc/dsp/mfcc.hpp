#pragma once

#include <complex>
#include <vector>

#include "fedcpc/dsp/waveform.hpp"
#include "fedcpc/tensor/tensor.hpp"

namespace fedcpc::dsp {

struct MfccConfig {
    int sample_rate = kDefaultSampleRate;
    double window_ms = 25.0;
    double shift_ms = 10.0;
    std::size_t fft_size = 512;
    std::size_t mel_filters = 26;
    std::size_t coefficients = 20; // kept DCT outputs, c0 included
    double low_hz = 0.0;
    double high_hz = 8000.0;
    double log_floor = 1e-10;
    double preemphasis = 0.0; // y[n] = x[n] - a*x[n-1]; 0 disables
    bool normalize = true; // per-utterance mean/variance, per coefficient

    std::size_t window_samples() const;
    std::size_t shift_samples() const;
};

// Row-major frames x coefficients.
struct MfccMatrix {
    std::size_t frames = 0;
    std::size_t coefficients = 0;
    std::vector<float> values;
    double window_ms = 25.0;
    double frame_shift_ms = 10.0;

    float at(std::size_t frame, std::size_t coeff) const { return values[frame * coefficients + coeff]; }
    Tensor to_tensor() const;
};

// floor((n - window) / shift) + 1; throws InsufficientAudio when n < window.
std::size_t frame_count(std::size_t n_samples, const MfccConfig& cfg = {});

std::vector<double> hamming_window(std::size_t n);

// Hamming-windowed frames, each cfg.window_samples() long.
std::vector<std::vector<double>> frame_and_window(const Waveform& wave, const MfccConfig& cfg = {});

double hz_to_mel(double hz);
double mel_to_hz(double mel);

struct MelFilterbank {
    std::size_t bins = 0;                 // fft_size / 2 + 1
    std::vector<std::vector<double>> weights; // filters x bins, triangular, peak 1
    std::vector<double> center_hz;        // from the mel-spaced points
    std::vector<std::size_t> center_bin;
};

MelFilterbank mel_filterbank(const MfccConfig& cfg = {});

// In-place radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<double>>& x);

// Every intermediate of the MFCC pipeline at f64, frame-major.
struct MfccStages {
    std::size_t frames = 0;
    std::vector<std::vector<double>> mel_energy;  // before the log
    std::vector<std::vector<double>> log_mel;     // ln(max(energy, floor))
    std::vector<std::vector<double>> cepstra;     // DCT-II (orthonormal), first `coefficients` kept
    std::vector<std::vector<double>> normalized;  // after per-utterance normalization (== cepstra if disabled)
};

MfccStages mfcc_stages(const Waveform& wave, const MfccConfig& cfg = {});
MfccMatrix mfcc(const Waveform& wave, const MfccConfig& cfg = {});

} // namespace fedcpc::dsp
