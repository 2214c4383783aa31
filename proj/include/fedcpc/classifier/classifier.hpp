#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedcpc/cpc/cpc.hpp"
#include "fedcpc/tensor/optim.hpp"
#include "fedcpc/tensor/parameter_set.hpp"
#include "fedcpc/tensor/tape.hpp"

namespace fedcpc::classifier {

enum class Label : int { hc = 0, mci = 1, ad = 2 };
constexpr std::size_t kClasses = 3;
const char* label_name(int label);
int parse_label(const std::string& name); // "HC" / "MCI" / "AD", throws ConfigError

enum class Head { cnn, cnn_lstm };

struct ClassifierConfig {
    std::size_t input_time = 259;
    std::size_t input_dim = 20;
    std::vector<std::size_t> conv_filters{32, 32, 32, 64, 128};
    std::size_t kernel = 3;
    std::size_t fc_width = 256;
    std::size_t lstm_layers = 0; // 0 for the CNN, 2 for the CNN-LSTM
    std::size_t lstm_hidden = 128;
    std::size_t n_classes = kClasses;
    std::size_t batch_size = 128;
    DType dtype = DType::f32;

    Head head() const { return lstm_layers ? Head::cnn_lstm : Head::cnn; }
    void validate() const;
    // Time and frequency extents after the conv/pool stack.
    std::pair<std::size_t, std::size_t> pooled_extent() const;
};

// What feeds the classifier.
enum class FrontEnd {
    features,        // examples hold precomputed [T x D] features (MFCC, or context features of a frozen encoder)
    cpc_finetune,    // examples hold raw [1 x L] waveforms; the CPC encoder runs inside the graph and trains
};

// A downstream model. With a CPC encoder attached, params also carries the
// encoder.* tensors: trainable when fine-tuning, frozen (requires_grad off) otherwise.
struct DownstreamModel {
    ClassifierConfig config;
    ParameterSet params;
    FrontEnd front = FrontEnd::features;
    std::optional<cpc::CpcConfig> encoder;
};

DownstreamModel make_classifier(const ClassifierConfig& cfg, std::uint64_t seed);
// Attaches the encoder.* parameters of a pretrained CPC model.
DownstreamModel make_cpc_classifier(const ClassifierConfig& cfg, std::uint64_t seed, const cpc::CpcModel& pretrained,
                                    bool finetune);

struct LabeledExample {
    Tensor input; // [T x D] features, or [1 x L] waveform for FrontEnd::cpc_finetune
    int label = 0;
    std::string speaker_id;
    std::string utterance_id;
};

// Center-crop or right-zero-pad along time to `frames` rows.
Var fit_time(Var x, std::size_t frames);

// Logits [n_classes] for one example.
Var forward(Tape& tape, DownstreamModel& model, Var input);

struct EpochHistory {
    std::uint64_t epoch = 0;
    double loss = 0;
    double accuracy = 0;
};

// Adam on the mean cross-entropy of minibatches. The example order of epoch e is
// drawn from derive_seed(seed, e).
EpochHistory train_epoch(DownstreamModel& model, std::span<const LabeledExample> data, OptimizerState& opt,
                         std::uint64_t seed, std::uint64_t epoch);
std::vector<EpochHistory> train_local(DownstreamModel& model, std::span<const LabeledExample> data,
                                      OptimizerState& opt, std::uint64_t seed, std::size_t epochs,
                                      std::uint64_t first_epoch = 0);

// Mean cross-entropy gradient over `data` at the current parameters, one tensor per trainable
// parameter (same name). Leaves the parameters' own gradients cleared.
ParameterSet mean_gradient(DownstreamModel& model, std::span<const LabeledExample> data);

// Argmax with ties to the lowest index.
int argmax_label(std::span<const double> logits);

struct Prediction {
    int label = 0;
    std::array<double, kClasses> logits{};
};
std::vector<Prediction> predict(DownstreamModel& model, std::span<const LabeledExample> data);

// Mean cross-entropy and accuracy without updating.
EpochHistory evaluate_loss(DownstreamModel& model, std::span<const LabeledExample> data);

} // namespace fedcpc::classifier
