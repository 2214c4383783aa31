#include "fedcpc/cpc/cpc.hpp"

#include <cmath>
#include <cstdio>
#include <memory>

#include "fedcpc/core/error.hpp"
#include "fedcpc/tensor/nn.hpp"

namespace fedcpc::cpc {

std::size_t CpcConfig::downsampling() const {
    std::size_t p = 1;
    for (std::size_t s : strides) p *= s;
    return p;
}

std::size_t CpcConfig::latent_length(std::size_t samples) const {
    std::size_t len = samples;
    for (std::size_t i = 0; i < kernel_sizes.size(); ++i) {
        const std::size_t padded = len + 2 * paddings[i];
        if (padded < kernel_sizes[i]) return 0;
        len = (padded - kernel_sizes[i]) / strides[i] + 1;
    }
    return len;
}

void CpcConfig::validate() const {
    if (kernel_sizes.empty() || kernel_sizes.size() != strides.size() || strides.size() != paddings.size())
        throw ConfigError("encoder kernel_sizes, strides and paddings must have equal non-zero length");
    for (std::size_t s : strides)
        if (s == 0) throw ConfigError("encoder strides must be positive");
    if (conv_channels == 0 || context_dim == 0) throw ConfigError("encoder and context widths must be positive");
    if (prediction_steps == 0) throw ConfigError("prediction_steps must be at least 1");
    if (latent_length(crop_length) <= prediction_steps)
        throw ConfigError("crop_length " + std::to_string(crop_length) + " gives " +
                          std::to_string(latent_length(crop_length)) + " latent frames, need more than " +
                          std::to_string(prediction_steps));
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
}

std::string head_name(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "heads.k%02zu.weight", k);
    return buf;
}

CpcModel make_model(const CpcConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    CpcModel m;
    m.config = cfg;
    Rng rng(seed);
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
        const std::string p = "encoder.conv" + std::to_string(i);
        nn::add_conv1d(m.params, p, in, cfg.conv_channels, cfg.kernel_sizes[i], cfg.strides[i], cfg.paddings[i],
                       cfg.dtype, rng);
        if (cfg.channel_norm) {
            Tensor gain = Tensor::full({cfg.conv_channels}, 1.0, cfg.dtype);
            Tensor bias({cfg.conv_channels}, cfg.dtype);
            gain.set_requires_grad(true);
            bias.set_requires_grad(true);
            m.params.add("encoder.norm" + std::to_string(i) + ".gain", std::move(gain));
            m.params.add("encoder.norm" + std::to_string(i) + ".bias", std::move(bias));
        }
        in = cfg.conv_channels;
    }
    nn::add_gru(m.params, "encoder.gru", cfg.conv_channels, cfg.context_dim, cfg.dtype, rng);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.context_dim));
    for (std::size_t k = 1; k <= cfg.prediction_steps; ++k) {
        Tensor w({cfg.conv_channels, cfg.context_dim}, cfg.dtype);
        nn::init_uniform(w, bound, rng);
        w.set_requires_grad(true);
        m.params.add(head_name(k), std::move(w));
    }
    return m;
}

namespace {

Var param(Tape& tape, ParameterSet& params, const std::string& name, bool track) {
    Tensor& t = params.get(name);
    return track ? tape.leaf(t) : tape.constant(t);
}

} // namespace

Var encode(Tape& tape, ParameterSet& params, const CpcConfig& cfg, Var wave, bool track_grads) {
    if (wave.shape().size() != 2 || wave.shape()[0] != 1)
        throw InvalidShape("encode expects a [1 x L] waveform, got " + to_string(wave.shape()));
    const std::size_t len = wave.shape()[1];
    if (len < cfg.downsampling() || cfg.latent_length(len) == 0)
        throw InsufficientAudio("encoder needs at least " + std::to_string(cfg.downsampling()) + " samples, got " +
                                std::to_string(len));
    Var x = wave;
    for (std::size_t i = 0; i < cfg.kernel_sizes.size(); ++i) {
        const std::string p = "encoder.conv" + std::to_string(i);
        x = ops::conv1d(x, param(tape, params, p + ".weight", track_grads), param(tape, params, p + ".bias", track_grads),
                        cfg.strides[i], cfg.paddings[i]);
        if (cfg.channel_norm) {
            const std::string n = "encoder.norm" + std::to_string(i);
            x = channel_norm(x, param(tape, params, n + ".gain", track_grads),
                             param(tape, params, n + ".bias", track_grads));
        }
        x = ops::relu(x);
    }
    return ops::transpose(x);
}

Var contextualize(Tape& tape, ParameterSet& params, const CpcConfig& cfg, Var z, bool track_grads) {
    if (z.shape().size() != 2 || z.shape()[0] == 0)
        throw InvalidShape("contextualize expects [T x D] with T >= 1, got " + to_string(z.shape()));
    Var h0 = tape.constant(Tensor({cfg.context_dim}, z.dtype()));
    return ops::gru(z, h0,
                    {param(tape, params, "encoder.gru.w_ih", track_grads),
                     param(tape, params, "encoder.gru.w_hh", track_grads),
                     param(tape, params, "encoder.gru.b_ih", track_grads),
                     param(tape, params, "encoder.gru.b_hh", track_grads)});
}

Var channel_norm(Var x, Var gain, Var bias, double eps) {
    if (x.shape().size() != 2) throw InvalidShape("channel_norm expects [C x T], got " + to_string(x.shape()));
    const std::size_t ch = x.shape()[0], steps = x.shape()[1];
    if (gain.shape() != Shape{ch} || bias.shape() != Shape{ch})
        throw InvalidShape("channel_norm gain/bias must be [" + std::to_string(ch) + "]");
    Tape& tape = x.tape();
    return dispatch(x.dtype(), [&]<class T>() {
        auto xv = x.value().data<T>();
        auto gv = gain.value().data<T>();
        auto bv = bias.value().data<T>();
        // Normalized activations and per-step inverse deviations, kept for backward.
        auto xhat = std::make_shared<std::vector<T>>(ch * steps);
        auto inv = std::make_shared<std::vector<T>>(steps);
        Tensor out({ch, steps}, x.dtype());
        auto o = out.data<T>();
        for (std::size_t t = 0; t < steps; ++t) {
            T mean = 0;
            for (std::size_t c = 0; c < ch; ++c) mean += xv[c * steps + t];
            mean /= static_cast<T>(ch);
            T var = 0;
            for (std::size_t c = 0; c < ch; ++c) var += (xv[c * steps + t] - mean) * (xv[c * steps + t] - mean);
            var /= static_cast<T>(ch);
            const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
            (*inv)[t] = is;
            for (std::size_t c = 0; c < ch; ++c) {
                const T h = (xv[c * steps + t] - mean) * is;
                (*xhat)[c * steps + t] = h;
                o[c * steps + t] = gv[c] * h + bv[c];
            }
        }
        return tape.record(std::move(out), {x, gain, bias}, [=](Tape& tp, Var out) {
            auto g = tp.grad<T>(out);
            auto gval = gain.value().data<T>();
            const auto& hat = *xhat;
            if (tp.needs_grad(gain) || tp.needs_grad(bias)) {
                for (std::size_t c = 0; c < ch; ++c) {
                    T sg = 0, sb = 0;
                    for (std::size_t t = 0; t < steps; ++t) {
                        sg += g[c * steps + t] * hat[c * steps + t];
                        sb += g[c * steps + t];
                    }
                    if (tp.needs_grad(gain)) tp.grad<T>(gain)[c] += sg;
                    if (tp.needs_grad(bias)) tp.grad<T>(bias)[c] += sb;
                }
            }
            if (!tp.needs_grad(x)) return;
            auto gx = tp.grad<T>(x);
            const T n = static_cast<T>(ch);
            for (std::size_t t = 0; t < steps; ++t) {
                T mean_d = 0, mean_dh = 0;
                for (std::size_t c = 0; c < ch; ++c) {
                    const T d = g[c * steps + t] * gval[c];
                    mean_d += d;
                    mean_dh += d * hat[c * steps + t];
                }
                mean_d /= n;
                mean_dh /= n;
                for (std::size_t c = 0; c < ch; ++c) {
                    const T d = g[c * steps + t] * gval[c];
                    gx[c * steps + t] += (*inv)[t] * (d - mean_d - hat[c * steps + t] * mean_dh);
                }
            }
        });
    });
}

Tensor extract_context_features(CpcModel& model, std::span<const float> samples) {
    Tape tape;
    const std::vector<float> wave(samples.begin(), samples.end());
    Tensor w = Tensor::from<float>({1, wave.size()}, wave).to(model.config.dtype);
    Var z = encode(tape, model.params, model.config, tape.constant(std::move(w)), false);
    Var c = contextualize(tape, model.params, model.config, z, false);
    return c.value();
}

} // namespace fedcpc::cpc
