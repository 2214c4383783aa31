#include <gtest/gtest.h>

#include <cmath>

#include "fedcpc/classifier/classifier.hpp"
#include "fedcpc/core/error.hpp"
#include "test_support.hpp"

using namespace fedcpc;
using namespace fedcpc::classifier;
using fedcpc::testing::parameter_gradient_check;
using fedcpc::testing::random_tensor;

namespace {

ClassifierConfig mini_config(std::size_t lstm_layers) {
    ClassifierConfig cfg;
    cfg.input_time = 16;
    cfg.input_dim = 20;
    cfg.conv_filters = {2, 2, 3, 3, 4};
    cfg.fc_width = 6;
    cfg.lstm_layers = lstm_layers;
    cfg.lstm_hidden = 4;
    cfg.batch_size = 4;
    cfg.dtype = DType::f64;
    return cfg;
}

// Class c shifts a band of feature columns, so the label is linearly visible.
std::vector<LabeledExample> separable_set(std::size_t n, const ClassifierConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<LabeledExample> out;
    for (std::size_t i = 0; i < n; ++i) {
        LabeledExample ex;
        ex.label = static_cast<int>(i % 3);
        ex.input = random_tensor({cfg.input_time, cfg.input_dim}, rng, -0.3, 0.3);
        for (std::size_t t = 0; t < cfg.input_time; ++t)
            for (std::size_t d = 0; d < cfg.input_dim; ++d)
                if (d / 7 == static_cast<std::size_t>(ex.label)) ex.input.set(t * cfg.input_dim + d, ex.input.at(t * cfg.input_dim + d) + 1.0);
        ex.utterance_id = "u" + std::to_string(i);
        out.push_back(std::move(ex));
    }
    return out;
}

cpc::CpcConfig tiny_cpc() {
    cpc::CpcConfig c;
    c.conv_channels = 4;
    c.context_dim = 6;
    c.prediction_steps = 2;
    c.crop_length = 160 * 8;
    c.negatives = 2;
    c.dtype = DType::f64;
    return c;
}

} // namespace

TEST(Classifier, LogitsHaveThreeEntries) {
    for (std::size_t layers : {0u, 2u}) {
        ClassifierConfig cfg;
        cfg.lstm_layers = layers;
        auto model = make_classifier(cfg, 1);
        Rng rng(2);
        Tape tape;
        Var logits = forward(tape, model, tape.constant(random_tensor({598, 20}, rng, -1, 1, DType::f32)));
        EXPECT_EQ(logits.shape(), Shape{3});
    }
}

TEST(Classifier, PooledExtentUsesCeilRounding) {
    ClassifierConfig cfg;
    EXPECT_EQ(cfg.pooled_extent(), (std::pair<std::size_t, std::size_t>{9, 1}));
}

TEST(Classifier, UntrainedCrossEntropyNearLn3) {
    ClassifierConfig cfg;
    cfg.lstm_layers = 2;
    auto model = make_classifier(cfg, 3);
    Rng rng(4);
    std::vector<LabeledExample> data;
    for (int i = 0; i < 30; ++i) {
        LabeledExample ex;
        ex.label = i % 3;
        ex.input = random_tensor({259, 20}, rng, -1, 1, DType::f32);
        data.push_back(std::move(ex));
    }
    EXPECT_NEAR(evaluate_loss(model, data).loss, std::log(3.0), 0.2);
}

TEST(Classifier, WrongFeatureWidthIsInvalidShape) {
    auto model = make_classifier(mini_config(0), 5);
    Tape tape;
    EXPECT_THROW(forward(tape, model, tape.constant(Tensor({16, 19}, DType::f64))), InvalidShape);
}

TEST(Classifier, FitTimeCropsCenterAndPadsRight) {
    Tape tape;
    Tensor x({6, 1}, DType::f64);
    for (std::size_t i = 0; i < 6; ++i) x.set(i, static_cast<double>(i));
    Var v = tape.constant(x);
    Var cropped = fit_time(v, 2);
    EXPECT_EQ(cropped.value().at(0), 2.0);
    EXPECT_EQ(cropped.value().at(1), 3.0);
    Var padded = fit_time(v, 8);
    EXPECT_EQ(padded.value().at(5), 5.0);
    EXPECT_EQ(padded.value().at(7), 0.0);
}

TEST(Classifier, FullGraphGradientMatchesFiniteDifferences) {
    for (std::size_t layers : {0u, 2u})
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            auto model = make_classifier(mini_config(layers), seed);
            Rng rng(seed + 50);
            const Tensor input = random_tensor({16, 20}, rng);
            const std::size_t label = seed % 3;
            const double err = parameter_gradient_check(model.params, [&](Tape& tape) {
                return ops::nll_loss(ops::log_softmax(forward(tape, model, tape.constant(input))), {label});
            });
            EXPECT_LT(err, 1e-3) << "seed " << seed << " lstm layers " << layers;
        }
}

TEST(Classifier, ZeroEpochsLeaveParametersUnchanged) {
    auto model = make_classifier(mini_config(0), 6);
    const ParameterSet before = model.params;
    auto data = separable_set(6, model.config, 1);
    auto opt = OptimizerState::adam(1e-2);
    train_local(model, data, opt, 1, 0);
    EXPECT_TRUE(model.params.bit_equal(before));
}

TEST(Classifier, OverfitsSeparableExamples) {
    for (std::size_t layers : {0u, 2u}) {
        auto cfg = mini_config(layers);
        cfg.conv_filters = {4, 4, 4, 8, 8};
        cfg.fc_width = 16;
        cfg.lstm_hidden = 8;
        auto model = make_classifier(cfg, 7);
        auto data = separable_set(20, cfg, 2);
        auto opt = OptimizerState::adam(3e-3);
        auto hist = train_local(model, data, opt, 3, 50);
        EXPECT_EQ(evaluate_loss(model, data).accuracy, 1.0) << "lstm layers " << layers;
        EXPECT_LT(hist.back().loss, hist.front().loss);
    }
}

TEST(Classifier, TrainingIsDeterministic) {
    auto data = separable_set(9, mini_config(2), 3);
    auto run = [&] {
        auto model = make_classifier(mini_config(2), 8);
        auto opt = OptimizerState::adam(1e-2);
        train_local(model, data, opt, 17, 3);
        return model.params;
    };
    EXPECT_TRUE(run().bit_equal(run()));
}

TEST(Classifier, EmptyDatasetIsConfigError) {
    auto model = make_classifier(mini_config(0), 9);
    auto opt = OptimizerState::adam(1e-2);
    std::vector<LabeledExample> none;
    EXPECT_THROW(train_local(model, none, opt, 1, 1), ConfigError);
}

TEST(Classifier, LstmVariantHasMoreParameters) {
    EXPECT_GT(make_classifier(mini_config(2), 1).params.total_elements(),
              make_classifier(mini_config(0), 1).params.total_elements());
    ClassifierConfig a, b;
    b.lstm_layers = 2;
    EXPECT_GT(make_classifier(b, 1).params.total_elements(), make_classifier(a, 1).params.total_elements());
}

TEST(Predict, TiesGoToLowestIndex) {
    const std::array<double, 3> l{0.2, 0.9, 0.9};
    EXPECT_EQ(argmax_label(l), 1);
    const std::array<double, 3> all{0.5, 0.5, 0.5};
    EXPECT_EQ(argmax_label(all), 0);
}

TEST(Predict, ZeroModelPredictsHc) {
    auto model = make_classifier(mini_config(0), 10);
    for (std::size_t i = 0; i < model.params.size(); ++i)
        for (std::size_t j = 0; j < model.params.at(i).numel(); ++j) model.params.at(i).set(j, 0.0);
    auto data = separable_set(6, model.config, 4);
    for (const auto& p : predict(model, data)) EXPECT_EQ(p.label, 0);
}

TEST(Predict, MatchesScalarArgmaxAndIgnoresShift) {
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        std::array<double, 3> l{};
        // Coarse values so ties actually occur.
        for (auto& v : l) v = std::round(rng.uniform(-3, 3));
        int expected = 0;
        if (l[1] > l[expected]) expected = 1;
        if (l[2] > l[expected]) expected = 2;
        EXPECT_EQ(argmax_label(l), expected);
        const double shift = rng.uniform(-10, 10);
        std::array<double, 3> shifted{l[0] + shift, l[1] + shift, l[2] + shift};
        if (l[0] != l[1] && l[1] != l[2] && l[0] != l[2]) EXPECT_EQ(argmax_label(shifted), expected);
    }
}

TEST(Predict, ExactShiftPreservesTies) {
    const std::array<double, 3> l{1.0, 3.0, 3.0};
    const std::array<double, 3> s{1.0 + 4.0, 3.0 + 4.0, 3.0 + 4.0};
    EXPECT_EQ(argmax_label(l), argmax_label(s));
}

TEST(CpcClassifier, FrozenEncoderStaysBitIdentical) {
    auto pretrained = cpc::make_model(tiny_cpc(), 1);
    auto cfg = mini_config(0);
    cfg.input_dim = 6;
    auto model = make_cpc_classifier(cfg, 2, pretrained, false);
    EXPECT_TRUE(model.params.contains("encoder.conv0.weight"));
    EXPECT_FALSE(model.params.contains("heads.k01.weight"));
    const ParameterSet before = model.params;
    std::vector<LabeledExample> data;
    Rng rng(3);
    for (int i = 0; i < 4; ++i) {
        LabeledExample ex;
        ex.label = i % 3;
        std::vector<float> wave(160 * 20);
        for (auto& s : wave) s = static_cast<float>(rng.uniform(-0.5, 0.5));
        ex.input = cpc::extract_context_features(pretrained, wave);
        data.push_back(std::move(ex));
    }
    auto opt = OptimizerState::adam(1e-2);
    train_local(model, data, opt, 1, 2);
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        const bool same = model.params.at(i).bit_equal(before.at(i));
        if (model.params.name(i).starts_with("encoder.")) EXPECT_TRUE(same) << model.params.name(i);
    }
    EXPECT_FALSE(model.params.bit_equal(before));
}

TEST(CpcClassifier, FineTuningUpdatesEncoder) {
    auto pretrained = cpc::make_model(tiny_cpc(), 4);
    auto cfg = mini_config(2);
    cfg.input_dim = 6;
    auto model = make_cpc_classifier(cfg, 5, pretrained, true);
    const ParameterSet before = model.params;
    Rng rng(6);
    std::vector<float> wave(160 * 20);
    for (auto& s : wave) s = static_cast<float>(rng.uniform(-0.5, 0.5));
    std::vector<LabeledExample> data(1);
    data[0].label = 2;
    data[0].input = Tensor::from<float>({1, wave.size()}, wave).to(DType::f64);
    auto opt = OptimizerState::adam(1e-3);
    train_local(model, data, opt, 1, 1);
    bool encoder_changed = false;
    for (std::size_t i = 0; i < model.params.size(); ++i)
        if (model.params.name(i).starts_with("encoder.") && !model.params.at(i).bit_equal(before.at(i)))
            encoder_changed = true;
    EXPECT_TRUE(encoder_changed);
}

TEST(CpcClassifier, FineTunedGraphGradient) {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto pretrained = cpc::make_model(tiny_cpc(), seed);
        auto cfg = mini_config(2);
        cfg.input_dim = 6;
        auto model = make_cpc_classifier(cfg, seed, pretrained, true);
        Rng rng(seed + 9);
        const Tensor wave = random_tensor({1, 160 * 16}, rng);
        const double err = parameter_gradient_check(model.params, [&](Tape& tape) {
            return ops::nll_loss(ops::log_softmax(forward(tape, model, tape.constant(wave))), {seed % 3});
        });
        EXPECT_LT(err, 1e-3) << "seed " << seed;
    }
}

TEST(Labels, NamesRoundTrip) {
    for (int l = 0; l < 3; ++l) EXPECT_EQ(parse_label(label_name(l)), l);
    EXPECT_THROW(parse_label("XX"), ConfigError);
}
