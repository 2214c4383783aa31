#include <numeric>
#include <ostream>

#include <spdlog/spdlog.h>

#include "fedcpc/core/error.hpp"
#include "fedcpc/cpc/cpc.hpp"

namespace fedcpc::cpc {

CropLoss crop_loss(Tape& tape, ParameterSet& params, const CpcConfig& cfg, Var wave, Rng& rng, bool track_grads) {
    Var z = encode(tape, params, cfg, wave, track_grads);
    Var c = contextualize(tape, params, cfg, z, track_grads);
    std::vector<Var> heads;
    for (std::size_t k = 1; k <= cfg.prediction_steps; ++k) {
        Tensor& w = params.get(head_name(k));
        heads.push_back(track_grads ? tape.leaf(w) : tape.constant(w));
    }
    const auto negs = sample_negatives(z.shape()[0], cfg.prediction_steps, cfg.negatives, rng);
    CropLoss out;
    out.detail = infonce(c, z, heads, negs);
    out.loss = ops::scale(out.detail.loss, 1.0 / static_cast<double>(out.detail.terms));
    return out;
}

namespace {

// A crop_length window at a random offset; short utterances are right-padded with zeros.
Tensor random_crop(const std::vector<float>& utt, const CpcConfig& cfg, Rng& rng) {
    std::vector<float> crop(cfg.crop_length, 0.0f);
    std::size_t offset = 0;
    if (utt.size() > cfg.crop_length) offset = rng.index(utt.size() - cfg.crop_length + 1);
    const std::size_t n = std::min(cfg.crop_length, utt.size());
    std::copy_n(utt.begin() + static_cast<std::ptrdiff_t>(offset), n, crop.begin());
    return Tensor::from<float>({1, cfg.crop_length}, std::move(crop)).to(cfg.dtype);
}

struct Tally {
    double loss = 0;
    std::size_t crops = 0;
    std::vector<double> correct;
    std::vector<std::size_t> counted;

    explicit Tally(std::size_t steps) : correct(steps, 0.0), counted(steps, 0) {}

    void add(const CropLoss& cl) {
        loss += cl.loss.value().item();
        ++crops;
        for (std::size_t k = 0; k < correct.size(); ++k) {
            correct[k] += cl.detail.correct[k];
            counted[k] += cl.detail.counted[k];
        }
    }

    EpochStats finish(std::uint64_t epoch) const {
        EpochStats s;
        s.epoch = epoch;
        s.loss = crops ? loss / static_cast<double>(crops) : 0.0;
        for (std::size_t k = 0; k < correct.size(); ++k)
            s.accuracy.push_back(counted[k] ? correct[k] / static_cast<double>(counted[k]) : 0.0);
        return s;
    }
};

} // namespace

EpochStats pretrain_epoch(CpcModel& model, std::span<const std::vector<float>> utterances, OptimizerState& opt,
                          std::uint64_t seed, std::uint64_t epoch) {
    const CpcConfig& cfg = model.config;
    if (utterances.empty()) throw ConfigError("pretraining needs at least one utterance");
    if (cfg.negatives == 0) spdlog::warn("contrastive loss with no negatives is constant zero");
    Rng rng(derive_seed(seed, epoch));
    std::vector<std::size_t> order(utterances.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());

    Tally tally(cfg.prediction_steps);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const double weight = 1.0 / static_cast<double>(end - start);
        // One graph per crop; backward() accumulates into the parameter gradients.
        for (std::size_t i = start; i < end; ++i) {
            Tape tape;
            Var wave = tape.constant(random_crop(utterances[order[i]], cfg, rng));
            CropLoss cl = crop_loss(tape, model.params, cfg, wave, rng);
            tally.add(cl);
            tape.backward(ops::scale(cl.loss, weight));
        }
        optimizer_step(model.params, opt);
    }
    return tally.finish(epoch);
}

std::vector<EpochStats> pretrain(CpcModel& model, std::span<const std::vector<float>> utterances,
                                 OptimizerState& opt, std::uint64_t seed, std::size_t epochs,
                                 const std::function<void(const EpochStats&)>& on_epoch) {
    std::vector<EpochStats> curve;
    for (std::size_t e = 0; e < epochs; ++e) {
        curve.push_back(pretrain_epoch(model, utterances, opt, seed, e));
        if (on_epoch) on_epoch(curve.back());
    }
    return curve;
}

EpochStats evaluate(CpcModel& model, std::span<const std::vector<float>> utterances, std::uint64_t seed) {
    Tally tally(model.config.prediction_steps);
    for (std::size_t i = 0; i < utterances.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        Tape tape;
        Var wave = tape.constant(random_crop(utterances[i], model.config, rng));
        tally.add(crop_loss(tape, model.params, model.config, wave, rng, false));
    }
    return tally.finish(0);
}

void write_curve_header(std::ostream& os, std::size_t steps) {
    os << "epoch,loss";
    for (std::size_t k = 1; k <= steps; ++k) os << ",ranking_accuracy_k" << k;
    os << '\n';
}

void write_curve_row(std::ostream& os, const EpochStats& stats) {
    os << stats.epoch << ',' << stats.loss;
    for (double a : stats.accuracy) os << ',' << a;
    os << '\n';
}

} // namespace fedcpc::cpc
