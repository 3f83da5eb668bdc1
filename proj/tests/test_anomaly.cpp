#include "exo/anomaly.hpp"

#include <gtest/gtest.h>

#include <filesystem>

using namespace exo;

namespace {

// Two-knee log with sinusoidal angles and torques; `glitch` adds a bump on [a, b) seconds.
EpisodeLog synthetic_log(int samples, double glitch_a = -1.0, double glitch_b = -1.0) {
    EpisodeLog log;
    log.joints = 2;
    for (int k = 0; k < samples; ++k) {
        const double t = k * 0.01;
        const double bump = t >= glitch_a && t < glitch_b ? 0.8 : 0.0;
        log.t.push_back(t);
        log.s.push_back(0.0);
        log.w.push_back(2.0);
        for (int i = 0; i < 2; ++i) {
            const double ph = kTwoPi * t + i * kPi;
            log.q.push_back(0.5 + 0.4 * std::sin(ph) + bump);
            log.tau_hat.push_back(3.0 * std::cos(ph) - 5.0 * bump);
        }
    }
    return log;
}

}  // namespace

TEST(Anomaly, WindowCount) {
    const WindowSpec spec{50, 25, Modality::multimodal};
    EXPECT_EQ(window_count(100, spec), 3u);
    EXPECT_EQ(window_count(49, spec), 0u);
    EXPECT_EQ(window_count(50, spec), 1u);
    EXPECT_THROW((WindowSpec{10, 6, Modality::multimodal}.validate()), std::invalid_argument);
}

TEST(Anomaly, ChannelsPerModality) {
    const EpisodeLog log = synthetic_log(60);
    EXPECT_EQ(extract_channels(log, Modality::multimodal).cols(), 4);
    EXPECT_EQ(extract_channels(log, Modality::torque_only).cols(), 2);
    EXPECT_EQ(extract_channels(log, Modality::phase_only).cols(), 2);
    EXPECT_EQ(extract_channels(log, Modality::torque_only)(3, 1), log.at(log.tau_hat, 3, 1));
    EXPECT_EQ(extract_channels(log, Modality::multimodal)(3, 2), log.at(log.q, 3, 0));
}

TEST(Anomaly, ConstantAtMinimumNormalizesToZero) {
    const MatrixXd lowest = MatrixXd::Constant(60, 2, -1.0);
    MatrixXd other = lowest;
    other.col(0).setConstant(3.0);
    other.col(1).setConstant(5.0);
    const Normalization n = fit_normalization({lowest, other});
    const MatrixXd w = segment(lowest, {50, 10, Modality::multimodal}, n);
    EXPECT_EQ(w.cols(), 2);
    EXPECT_TRUE(w.isZero(0.0));
}

TEST(Anomaly, NormalizeRoundTrip) {
    Normalization n;
    n.lo = (VectorXd(2) << -2.0, 0.5).finished();
    n.hi = (VectorXd(2) << 3.0, 0.7).finished();
    for (double v : {-2.0, 0.1, 3.0, 10.0}) EXPECT_NEAR(denormalize(n, 0, normalize(n, 0, v)), v, 1e-14);
    EXPECT_DOUBLE_EQ(normalize(n, 1, 0.7), 1.0);
}

TEST(Anomaly, DegenerateChannelGetsUnitRange) {
    const Normalization n = fit_normalization({MatrixXd::Constant(5, 1, 2.0)});
    EXPECT_EQ(n.lo[0], 2.0);
    EXPECT_EQ(n.hi[0], 3.0);
}

TEST(Anomaly, KlDivergence) {
    EXPECT_EQ(gaussian_kl(VectorXd::Zero(3), VectorXd::Zero(3)), 0.0);
    EXPECT_NEAR(gaussian_kl(VectorXd::Ones(1), VectorXd::Zero(1)), 0.5, 1e-15);
    const double lv = std::log(2.0);
    EXPECT_NEAR(gaussian_kl(VectorXd::Zero(1), VectorXd::Constant(1, lv)), 0.5 * (2.0 - lv - 1.0), 1e-15);
}

TEST(Anomaly, AucOfSeparatedScoresIsOne) {
    EXPECT_DOUBLE_EQ(evaluate_auc({0.1, 0.2, 0.3, 0.9, 1.0}, {0, 0, 0, 1, 1}).auc, 1.0);
    EXPECT_DOUBLE_EQ(evaluate_auc({0.9, 1.0, 0.1}, {0, 0, 1}).auc, 0.0);
    EXPECT_DOUBLE_EQ(evaluate_auc({0.5, 0.5, 0.5, 0.5}, {0, 1, 0, 1}).auc, 0.5);
}

TEST(Anomaly, AucMatchesPairCounting) {
    Rng rng(12);
    std::vector<double> s;
    std::vector<int> l;
    for (int k = 0; k < 400; ++k) {
        l.push_back(rng.uniform() < 0.3 ? 1 : 0);
        s.push_back(std::round(10.0 * (rng.uniform() + 0.3 * l.back())) / 10.0);
    }
    double wins = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (l[i] == 1 && l[j] == 0) {
                pairs += 1.0;
                wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
    EXPECT_NEAR(evaluate_auc(s, l).auc, wins / pairs, 1e-12);
}

TEST(Anomaly, AucOfRandomScoresIsNearHalf) {
    Rng rng(5);
    std::vector<double> s;
    std::vector<int> l;
    for (int k = 0; k < 20000; ++k) {
        s.push_back(rng.uniform());
        l.push_back(k % 2);
    }
    EXPECT_NEAR(evaluate_auc(s, l).auc, 0.5, 0.02);
}

TEST(Anomaly, AucNeedsBothClasses) {
    EXPECT_THROW(evaluate_auc({0.1, 0.2}, {1, 1}), std::invalid_argument);
    EXPECT_THROW(evaluate_auc({0.1, 0.2}, {0, 0}), std::invalid_argument);
    EXPECT_THROW(evaluate_auc({0.1}, {0, 1}), std::invalid_argument);
}

TEST(Anomaly, PerfectReconstructionScoresZero) {
    VaeModel m;
    m.spec = {4, 2, Modality::torque_only};
    m.norm.lo = VectorXd::Zero(1);
    m.norm.hi = VectorXd::Ones(1);
    m.latent = 4;
    m.encoder = nn::DenseNet({4, 8}, {nn::Activation::identity});
    m.encoder.layers()[0].weight.topRows(4).setIdentity();
    m.decoder = nn::DenseNet({4, 4}, {nn::Activation::identity});
    m.decoder.layers()[0].weight.setIdentity();
    const VectorXd x = (VectorXd(4) << 0.1, 0.9, 0.4, 0.0).finished();
    EXPECT_EQ(score(m, x), 0.0);
    m.decoder.layers()[0].bias.setConstant(0.5);
    EXPECT_NEAR(score(m, x), 0.25, 1e-15);
    EXPECT_THROW(score(m, VectorXd::Zero(3)), std::invalid_argument);
}

TEST(Anomaly, WindowLabelsNeedHalfOverlap) {
    const EpisodeLog log = synthetic_log(200);
    const WindowSpec spec{50, 10, Modality::multimodal};
    // Event covers samples 100..149 (t in [1.0, 1.49]).
    const auto labels = window_labels(log, spec, {ConflictEvent{ConflictKind::imbalance, 1.0, 0.49, 1.0}});
    ASSERT_EQ(labels.size(), window_count(200, spec));
    EXPECT_EQ(labels[5], 0);   // samples 50..99
    EXPECT_EQ(labels[8], 1);   // 80..129: 30 inside
    EXPECT_EQ(labels[10], 1);  // 100..149
    EXPECT_EQ(labels[13], 0);  // 130..179: 20 inside
}

TEST(Anomaly, TrainingNeedsEnoughWindows) {
    const WindowSpec spec{50, 10, Modality::torque_only};
    Normalization n;
    n.lo = VectorXd::Zero(2);
    n.hi = VectorXd::Ones(2);
    EXPECT_THROW(train_vae(MatrixXd::Zero(100, 99), spec, n, {}), std::invalid_argument);
    EXPECT_THROW(train_vae(MatrixXd::Zero(99, 200), spec, n, {}), std::invalid_argument);
}

TEST(Anomaly, DetectorScoresGlitchAboveNormal) {
    std::vector<EpisodeLog> train;
    for (int e = 0; e < 3; ++e) train.push_back(synthetic_log(600));
    const WindowSpec spec{50, 10, Modality::multimodal};
    VaeConfig cfg;
    cfg.hidden = 32;
    cfg.train.epochs = 30;
    const auto trained = train_detector(train, spec, cfg);
    EXPECT_LT(trained.curve.final_loss(), trained.curve.initial_loss());

    const EpisodeLog test = synthetic_log(600, 3.0, 4.0);
    const MatrixXd series = extract_channels(test, spec.modality);
    const VectorXd s = score_windows(trained.model, segment(series, spec, trained.model.norm));
    const auto labels = window_labels(test, spec, {ConflictEvent{ConflictKind::imbalance, 3.0, 1.0, 1.0}});
    EXPECT_GT(evaluate_auc(std::vector<double>(s.data(), s.data() + s.size()), labels).auc, 0.9);

    const auto fn = make_score_fn(trained.model);
    EXPECT_EQ(fn(test, 10), 0.0);
    EXPECT_NEAR(fn(test, 50), s[0], 1e-12);
}

TEST(Anomaly, ModelFileRoundTrip) {
    std::vector<EpisodeLog> train = {synthetic_log(600)};
    const WindowSpec spec{50, 5, Modality::phase_only};
    VaeConfig cfg;
    cfg.hidden = 8;
    cfg.train.epochs = 2;
    const VaeModel m = train_detector(train, spec, cfg).model;
    const auto path = (std::filesystem::path(testing::TempDir()) / "vae_roundtrip.bin").string();
    save_vae(path, m, "# config_hash=abc seed=1");
    const VaeModel back = load_vae(path);
    EXPECT_EQ(back.spec.length, 50);
    EXPECT_EQ(back.spec.modality, Modality::phase_only);
    EXPECT_EQ(back.encoder.flatten(), m.encoder.flatten());
    EXPECT_EQ(back.decoder.flatten(), m.decoder.flatten());
    EXPECT_EQ(back.norm.lo, m.norm.lo);
    std::filesystem::remove(path);
    EXPECT_THROW(load_vae(path), std::runtime_error);
}
