#include "fedcpc/classifier/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedcpc/core/error.hpp"
#include "fedcpc/tensor/nn.hpp"

namespace fedcpc::classifier {

const char* label_name(int label) {
    switch (label) {
    case 0: return "HC";
    case 1: return "MCI";
    case 2: return "AD";
    }
    throw ContractViolation("label out of range: " + std::to_string(label));
}

int parse_label(const std::string& name) {
    for (int l = 0; l < 3; ++l)
        if (name == label_name(l)) return l;
    throw ConfigError("unknown class label '" + name + "'");
}

void ClassifierConfig::validate() const {
    if (conv_filters.size() != 5) throw ConfigError("conv_filters must list 5 layers");
    for (std::size_t f : conv_filters)
        if (f == 0) throw ConfigError("conv_filters must be positive");
    if (input_time == 0 || input_dim == 0) throw ConfigError("classifier input extent must be positive");
    if (kernel % 2 == 0) throw ConfigError("conv kernel must be odd");
    if (n_classes != kClasses) throw ConfigError("classifiers have exactly 3 classes");
    if (lstm_layers != 0 && lstm_hidden == 0) throw ConfigError("lstm_hidden must be positive");
    if (fc_width == 0 || batch_size == 0) throw ConfigError("fc_width and batch_size must be positive");
}

std::pair<std::size_t, std::size_t> ClassifierConfig::pooled_extent() const {
    std::size_t t = input_time, f = input_dim;
    for (std::size_t i = 0; i < conv_filters.size(); ++i) {
        t = (t + 1) / 2;
        f = (f + 1) / 2;
    }
    return {t, f};
}

namespace {

std::string conv_name(std::size_t i) { return "classifier.conv" + std::to_string(i); }
std::string lstm_name(std::size_t i) { return "classifier.lstm" + std::to_string(i); }

void add_classifier_params(ParameterSet& ps, const ClassifierConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg.conv_filters.size(); ++i) {
        nn::add_conv2d(ps, conv_name(i), in, cfg.conv_filters[i], cfg.kernel, cfg.dtype, rng);
        in = cfg.conv_filters[i];
    }
    const auto [t, f] = cfg.pooled_extent();
    std::size_t fc_in = in * t * f;
    if (cfg.lstm_layers) {
        std::size_t lin = in * f;
        for (std::size_t i = 0; i < cfg.lstm_layers; ++i) {
            nn::add_lstm(ps, lstm_name(i), lin, cfg.lstm_hidden, cfg.dtype, rng);
            lin = cfg.lstm_hidden;
        }
        fc_in = cfg.lstm_hidden;
    }
    nn::add_linear(ps, "classifier.fc0", fc_in, cfg.fc_width, cfg.dtype, rng);
    nn::add_linear(ps, "classifier.fc1", cfg.fc_width, cfg.fc_width, cfg.dtype, rng);
    nn::add_linear(ps, "classifier.out", cfg.fc_width, cfg.n_classes, cfg.dtype, rng);
}

Var leaf(Tape& tape, ParameterSet& ps, const std::string& name) { return tape.leaf(ps.get(name)); }

Var dense(Tape& tape, ParameterSet& ps, const std::string& prefix, Var x) {
    return ops::linear(x, leaf(tape, ps, prefix + ".weight"), leaf(tape, ps, prefix + ".bias"));
}

} // namespace

DownstreamModel make_classifier(const ClassifierConfig& cfg, std::uint64_t seed) {
    DownstreamModel m;
    m.config = cfg;
    add_classifier_params(m.params, cfg, seed);
    return m;
}

DownstreamModel make_cpc_classifier(const ClassifierConfig& cfg, std::uint64_t seed, const cpc::CpcModel& pretrained,
                                    bool finetune) {
    if (cfg.input_dim != pretrained.config.context_dim)
        throw ConfigError("classifier input_dim " + std::to_string(cfg.input_dim) + " != CPC context_dim " +
                          std::to_string(pretrained.config.context_dim));
    DownstreamModel m;
    m.config = cfg;
    m.encoder = pretrained.config;
    m.front = finetune ? FrontEnd::cpc_finetune : FrontEnd::features;
    const std::vector<std::string> prefix{"encoder."};
    m.params = pretrained.params.select(prefix);
    m.params.set_requires_grad(finetune);
    add_classifier_params(m.params, cfg, seed);
    return m;
}

Var fit_time(Var x, std::size_t frames) {
    const std::size_t len = x.shape()[0];
    if (len == frames) return x;
    const std::ptrdiff_t start = len > frames ? static_cast<std::ptrdiff_t>((len - frames) / 2) : 0;
    return ops::slice_rows(x, start, frames);
}

Var forward(Tape& tape, DownstreamModel& model, Var input) {
    const ClassifierConfig& cfg = model.config;
    ParameterSet& ps = model.params;
    Var x = input;
    if (model.front == FrontEnd::cpc_finetune) {
        x = cpc::encode(tape, ps, *model.encoder, x);
        x = cpc::contextualize(tape, ps, *model.encoder, x);
    }
    if (x.shape().size() != 2 || x.shape()[1] != cfg.input_dim)
        throw InvalidShape("classifier expects [T x " + std::to_string(cfg.input_dim) + "] features, got " +
                           to_string(x.shape()));
    x = fit_time(x, cfg.input_time);
    x = ops::reshape(x, {1, cfg.input_time, cfg.input_dim});
    for (std::size_t i = 0; i < cfg.conv_filters.size(); ++i) {
        const std::string p = conv_name(i);
        x = ops::conv2d(x, leaf(tape, ps, p + ".weight"), leaf(tape, ps, p + ".bias"), cfg.kernel / 2);
        x = ops::maxpool2d(ops::relu(x));
    }
    if (cfg.lstm_layers) {
        // [C x T' x F'] -> time-major [T' x (C * F')]
        const std::size_t c = x.shape()[0], t = x.shape()[1], f = x.shape()[2];
        x = ops::reshape(ops::permute3(x, {1, 0, 2}), {t, c * f});
        for (std::size_t i = 0; i < cfg.lstm_layers; ++i) {
            const std::string p = lstm_name(i);
            Var h0 = tape.constant(Tensor({cfg.lstm_hidden}, x.dtype()));
            Var c0 = tape.constant(Tensor({cfg.lstm_hidden}, x.dtype()));
            x = ops::lstm(x, h0, c0,
                          {leaf(tape, ps, p + ".w_ih"), leaf(tape, ps, p + ".w_hh"), leaf(tape, ps, p + ".b_ih"),
                           leaf(tape, ps, p + ".b_hh")});
        }
        x = ops::reshape(ops::slice_rows(x, static_cast<std::ptrdiff_t>(x.shape()[0]) - 1, 1), {cfg.lstm_hidden});
    } else {
        x = ops::reshape(x, {x.numel()});
    }
    x = ops::relu(dense(tape, ps, "classifier.fc0", x));
    x = ops::relu(dense(tape, ps, "classifier.fc1", x));
    return dense(tape, ps, "classifier.out", x);
}

int argmax_label(std::span<const double> logits) {
    int best = 0;
    for (std::size_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    return best;
}

namespace {

Var input_var(Tape& tape, const DownstreamModel& model, const LabeledExample& ex) {
    if (ex.input.dtype() == model.config.dtype) return tape.constant(ex.input);
    return tape.constant(ex.input.to(model.config.dtype));
}

std::array<double, kClasses> logits_of(Var v) {
    std::array<double, kClasses> out{};
    for (std::size_t i = 0; i < kClasses; ++i) out[i] = v.value().at(i);
    return out;
}

} // namespace

EpochHistory train_epoch(DownstreamModel& model, std::span<const LabeledExample> data, OptimizerState& opt,
                         std::uint64_t seed, std::uint64_t epoch) {
    if (data.empty()) throw ConfigError("training needs at least one example");
    Rng rng(derive_seed(seed, epoch));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());

    EpochHistory h;
    h.epoch = epoch;
    std::size_t correct = 0;
    const std::size_t bs = model.config.batch_size;
    for (std::size_t start = 0; start < order.size(); start += bs) {
        const std::size_t end = std::min(order.size(), start + bs);
        const double weight = 1.0 / static_cast<double>(end - start);
        // One graph per example; backward() accumulates into the parameter gradients.
        for (std::size_t i = start; i < end; ++i) {
            const LabeledExample& ex = data[order[i]];
            Tape tape;
            Var logits = forward(tape, model, input_var(tape, model, ex));
            Var loss = ops::nll_loss(ops::log_softmax(logits), {static_cast<std::size_t>(ex.label)});
            h.loss += loss.value().item();
            const auto l = logits_of(logits);
            correct += argmax_label(l) == ex.label;
            tape.backward(ops::scale(loss, weight));
        }
        optimizer_step(model.params, opt);
    }
    h.loss /= static_cast<double>(data.size());
    h.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return h;
}

std::vector<EpochHistory> train_local(DownstreamModel& model, std::span<const LabeledExample> data,
                                      OptimizerState& opt, std::uint64_t seed, std::size_t epochs,
                                      std::uint64_t first_epoch) {
    if (data.empty()) throw ConfigError("training needs at least one example");
    std::vector<EpochHistory> out;
    for (std::size_t e = 0; e < epochs; ++e) out.push_back(train_epoch(model, data, opt, seed, first_epoch + e));
    return out;
}

ParameterSet mean_gradient(DownstreamModel& model, std::span<const LabeledExample> data) {
    if (data.empty()) throw ConfigError("gradient needs at least one example");
    for (std::size_t p = 0; p < model.params.size(); ++p) model.params.at(p).clear_grad();
    const double weight = 1.0 / static_cast<double>(data.size());
    for (const auto& ex : data) {
        Tape tape;
        Var logits = forward(tape, model, input_var(tape, model, ex));
        Var loss = ops::nll_loss(ops::log_softmax(logits), {static_cast<std::size_t>(ex.label)});
        tape.backward(ops::scale(loss, weight));
    }
    ParameterSet out;
    for (std::size_t p = 0; p < model.params.size(); ++p) {
        Tensor& t = model.params.at(p);
        if (!t.requires_grad() || !t.has_grad()) continue;
        Tensor g(t.shape(), t.dtype());
        dispatch(t.dtype(), [&]<class T>() {
            auto src = t.grad<T>();
            std::copy(src.begin(), src.end(), g.data<T>().begin());
        });
        out.add(model.params.name(p), std::move(g));
        t.clear_grad();
    }
    return out;
}

std::vector<Prediction> predict(DownstreamModel& model, std::span<const LabeledExample> data) {
    std::vector<Prediction> out;
    out.reserve(data.size());
    for (const auto& ex : data) {
        Tape tape;
        Prediction p;
        p.logits = logits_of(forward(tape, model, input_var(tape, model, ex)));
        p.label = argmax_label(p.logits);
        out.push_back(p);
    }
    return out;
}

EpochHistory evaluate_loss(DownstreamModel& model, std::span<const LabeledExample> data) {
    EpochHistory h;
    if (data.empty()) return h;
    const auto preds = predict(model, data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& l = preds[i].logits;
        const double m = *std::max_element(l.begin(), l.end());
        double s = 0;
        for (double v : l) s += std::exp(v - m);
        h.loss += m + std::log(s) - l[static_cast<std::size_t>(data[i].label)];
        correct += preds[i].label == data[i].label;
    }
    h.loss /= static_cast<double>(data.size());
    h.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return h;
}

} // namespace fedcpc::classifier
