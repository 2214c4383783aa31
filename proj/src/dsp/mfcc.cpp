#include "fedcpc/dsp/mfcc.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "fedcpc/core/error.hpp"

namespace fedcpc::dsp {

std::size_t MfccConfig::window_samples() const {
    return static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
}

std::size_t MfccConfig::shift_samples() const {
    return static_cast<std::size_t>(std::lround(shift_ms * sample_rate / 1000.0));
}

Tensor MfccMatrix::to_tensor() const { return Tensor::from<float>({frames, coefficients}, values); }

std::size_t frame_count(std::size_t n_samples, const MfccConfig& cfg) {
    const std::size_t win = cfg.window_samples();
    if (n_samples < win)
        throw InsufficientAudio("need at least " + std::to_string(win) + " samples for one frame, got " +
                                std::to_string(n_samples));
    return (n_samples - win) / cfg.shift_samples() + 1;
}

std::vector<double> hamming_window(std::size_t n) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    return w;
}

std::vector<std::vector<double>> frame_and_window(const Waveform& wave, const MfccConfig& cfg) {
    const std::size_t frames = frame_count(wave.samples.size(), cfg);
    const std::size_t win = cfg.window_samples(), hop = cfg.shift_samples();
    const auto window = hamming_window(win);
    std::vector<std::vector<double>> out(frames, std::vector<double>(win));
    const auto& x = wave.samples;
    const double a = cfg.preemphasis;
    for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t i = 0; i < win; ++i) {
            const std::size_t n = f * hop + i;
            double v = x[n];
            if (a != 0.0 && n > 0) v -= a * static_cast<double>(x[n - 1]);
            out[f][i] = window[i] * v;
        }
    return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(const MfccConfig& cfg) {
    MelFilterbank fb;
    fb.bins = cfg.fft_size / 2 + 1;
    const std::size_t n = cfg.mel_filters;
    const double lo = hz_to_mel(cfg.low_hz), hi = hz_to_mel(cfg.high_hz);
    std::vector<std::size_t> edge(n + 2);
    std::vector<double> edge_hz(n + 2);
    for (std::size_t i = 0; i < n + 2; ++i) {
        edge_hz[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n + 1));
        edge[i] = static_cast<std::size_t>(
            std::floor(static_cast<double>(cfg.fft_size + 1) * edge_hz[i] / cfg.sample_rate));
    }
    fb.weights.assign(n, std::vector<double>(fb.bins, 0.0));
    for (std::size_t m = 1; m <= n; ++m) {
        const std::size_t left = edge[m - 1], center = edge[m], right = edge[m + 1];
        if (!(left < center && center < right) || right >= fb.bins)
            throw ConfigError("mel filter " + std::to_string(m - 1) + " collapses at this FFT size");
        for (std::size_t k = left; k < center; ++k)
            fb.weights[m - 1][k] = static_cast<double>(k - left) / static_cast<double>(center - left);
        for (std::size_t k = center; k <= right; ++k)
            fb.weights[m - 1][k] = static_cast<double>(right - k) / static_cast<double>(right - center);
        fb.center_hz.push_back(edge_hz[m]);
        fb.center_bin.push_back(center);
    }
    return fb;
}

void fft(std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    if (n == 0 || (n & (n - 1)) != 0) throw ConfigError("FFT size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
        for (std::size_t i = 0; i < n; i += len)
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
                const auto u = x[i + k], v = x[i + k + len / 2] * w;
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
            }
    }
}

MfccStages mfcc_stages(const Waveform& wave, const MfccConfig& cfg) {
    if (cfg.coefficients > cfg.mel_filters) throw ConfigError("more cepstral coefficients than mel filters");
    if (cfg.window_samples() > cfg.fft_size) throw ConfigError("analysis window longer than the FFT");
    const auto frames = frame_and_window(wave, cfg);
    const auto fb = mel_filterbank(cfg);
    const std::size_t n_mel = cfg.mel_filters, n_cep = cfg.coefficients;

    // DCT-II, orthonormal scaling.
    std::vector<std::vector<double>> dct(n_cep, std::vector<double>(n_mel));
    for (std::size_t k = 0; k < n_cep; ++k) {
        const double s = std::sqrt((k == 0 ? 1.0 : 2.0) / static_cast<double>(n_mel));
        for (std::size_t m = 0; m < n_mel; ++m)
            dct[k][m] = s * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * m + 1.0) / (2.0 * n_mel));
    }

    MfccStages st;
    st.frames = frames.size();
    st.mel_energy.resize(st.frames);
    st.log_mel.resize(st.frames);
    st.cepstra.resize(st.frames);
    std::vector<std::complex<double>> spec(cfg.fft_size);
    std::vector<double> power(fb.bins);
    for (std::size_t f = 0; f < st.frames; ++f) {
        std::fill(spec.begin(), spec.end(), std::complex<double>(0.0, 0.0));
        for (std::size_t i = 0; i < frames[f].size(); ++i) spec[i] = frames[f][i];
        fft(spec);
        for (std::size_t k = 0; k < fb.bins; ++k) power[k] = std::norm(spec[k]);

        auto& energy = st.mel_energy[f];
        auto& logm = st.log_mel[f];
        energy.assign(n_mel, 0.0);
        logm.resize(n_mel);
        for (std::size_t m = 0; m < n_mel; ++m) {
            for (std::size_t k = 0; k < fb.bins; ++k) energy[m] += fb.weights[m][k] * power[k];
            logm[m] = std::log(std::max(energy[m], cfg.log_floor));
        }
        auto& cep = st.cepstra[f];
        cep.assign(n_cep, 0.0);
        for (std::size_t k = 0; k < n_cep; ++k)
            for (std::size_t m = 0; m < n_mel; ++m) cep[k] += dct[k][m] * logm[m];
    }

    st.normalized = st.cepstra;
    if (cfg.normalize) {
        const double n = static_cast<double>(st.frames);
        for (std::size_t k = 0; k < n_cep; ++k) {
            double mean = 0;
            for (std::size_t f = 0; f < st.frames; ++f) mean += st.cepstra[f][k];
            mean /= n;
            double var = 0;
            for (std::size_t f = 0; f < st.frames; ++f) var += (st.cepstra[f][k] - mean) * (st.cepstra[f][k] - mean);
            const double sd = std::sqrt(var / n);
            // A coefficient that never varies is only centered.
            const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;
            for (std::size_t f = 0; f < st.frames; ++f) st.normalized[f][k] = (st.cepstra[f][k] - mean) * inv;
        }
    }
    return st;
}

MfccMatrix mfcc(const Waveform& wave, const MfccConfig& cfg) {
    const auto st = mfcc_stages(wave, cfg);
    MfccMatrix out;
    out.frames = st.frames;
    out.coefficients = cfg.coefficients;
    out.window_ms = cfg.window_ms;
    out.frame_shift_ms = cfg.shift_ms;
    out.values.resize(out.frames * out.coefficients);
    for (std::size_t f = 0; f < out.frames; ++f)
        for (std::size_t k = 0; k < out.coefficients; ++k)
            out.values[f * out.coefficients + k] = static_cast<float>(st.normalized[f][k]);
    return out;
}

} // namespace fedcpc::dsp
