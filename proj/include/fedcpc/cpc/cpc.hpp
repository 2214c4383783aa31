#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fedcpc/core/rng.hpp"
#include "fedcpc/tensor/ops.hpp"
#include "fedcpc/tensor/optim.hpp"
#include "fedcpc/tensor/parameter_set.hpp"
#include "fedcpc/tensor/tape.hpp"

namespace fedcpc::cpc {

struct CpcConfig {
    std::size_t conv_channels = 512;
    std::vector<std::size_t> kernel_sizes{10, 8, 4, 4, 4};
    std::vector<std::size_t> strides{5, 4, 2, 2, 2};
    std::vector<std::size_t> paddings{3, 2, 1, 1, 1};
    std::size_t context_dim = 256;
    std::size_t prediction_steps = 12;
    std::size_t crop_length = 20480;
    std::size_t negatives = 15; // N - 1 per term
    double lr = 2e-4;
    std::size_t batch_size = 8;
    std::size_t epochs = 100;
    bool channel_norm = false;
    DType dtype = DType::f32;

    std::size_t downsampling() const;
    // Latent frames produced for an input of `samples` samples (0 if the chain collapses).
    std::size_t latent_length(std::size_t samples) const;
    // Throws ConfigError when the geometry or the crop/K relation is inconsistent.
    void validate() const;
};

// Parameter names:
//   encoder.conv{i}.weight / .bias   strided conv stack
//   encoder.norm{i}.gain / .bias     only with channel_norm
//   encoder.gru.w_ih / ...           context network
//   heads.k{NN}.weight               W_k, [conv_channels x context_dim]
struct CpcModel {
    CpcConfig config;
    ParameterSet params;
};

CpcModel make_model(const CpcConfig& cfg, std::uint64_t seed);

std::string head_name(std::size_t k);

// The forward passes read parameters by name from `params`, which may be a larger
// set (e.g. a downstream model that embeds the encoder). With track_grads unset
// the parameters enter the tape as constants.
//
// wave [1 x L] -> Z [T_z x conv_channels]
Var encode(Tape& tape, ParameterSet& params, const CpcConfig& cfg, Var wave, bool track_grads = true);
// Z [T_z x D] -> C [T_z x context_dim]; c_t sees z_1..z_t only.
Var contextualize(Tape& tape, ParameterSet& params, const CpcConfig& cfg, Var z, bool track_grads = true);

// Per-step channel normalization: each time step is standardized across channels,
// then scaled and shifted per channel. x [C x T], gain and bias [C].
Var channel_norm(Var x, Var gain, Var bias, double eps = 1e-5);

// negatives[k-1][t][j]: the j-th negative frame index for the term (t, k).
using NegativeIndices = std::vector<std::vector<std::vector<std::size_t>>>;

// Uniform over frames other than the positive t + k, with replacement.
NegativeIndices sample_negatives(std::size_t frames, std::size_t steps, std::size_t n_negatives, Rng& rng);

struct InfoNceResult {
    Var loss;                         // sum of per-term losses
    std::size_t terms = 0;
    std::vector<double> correct;      // per k, expected number of terms ranking the positive first
    std::vector<std::size_t> counted; // per k, number of terms
};

// Per term (t, k): -log( exp(s_pos) / ((1/N) sum_j exp(s_j)) ) with s = z^T W_k c_t over the
// positive z_{t+k} and its negatives. Ties for the top score share the credit evenly.
InfoNceResult infonce(Var c, Var z, std::span<const Var> heads, const NegativeIndices& negatives);

// Loss and ranking accuracy for one crop, mean over terms.
struct CropLoss {
    Var loss; // mean over terms
    InfoNceResult detail;
};
CropLoss crop_loss(Tape& tape, ParameterSet& params, const CpcConfig& cfg, Var wave, Rng& rng,
                   bool track_grads = true);

struct EpochStats {
    std::uint64_t epoch = 0;
    double loss = 0;
    std::vector<double> accuracy; // per k
};

// One pass over `utterances` in shuffled order: batches of random crops, Adam on the
// mean InfoNCE. Shuffling and crops draw from derive_seed(seed, epoch).
EpochStats pretrain_epoch(CpcModel& model, std::span<const std::vector<float>> utterances, OptimizerState& opt,
                          std::uint64_t seed, std::uint64_t epoch);

std::vector<EpochStats> pretrain(CpcModel& model, std::span<const std::vector<float>> utterances,
                                 OptimizerState& opt, std::uint64_t seed, std::size_t epochs,
                                 const std::function<void(const EpochStats&)>& on_epoch = {});

// Loss and ranking accuracy on fixed crops (deterministic given seed), no update.
EpochStats evaluate(CpcModel& model, std::span<const std::vector<float>> utterances, std::uint64_t seed);

void write_curve_header(std::ostream& os, std::size_t steps);
void write_curve_row(std::ostream& os, const EpochStats& stats);

// Full-length context features [T_z x context_dim] for a downstream model.
Tensor extract_context_features(CpcModel& model, std::span<const float> samples);

} // namespace fedcpc::cpc
