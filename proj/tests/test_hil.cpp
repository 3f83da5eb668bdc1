#include "exo/hil.hpp"

#include <gtest/gtest.h>

using namespace exo;

namespace {

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index k = 0;
    for (double x : v) out[k++] = x;
    return out;
}

EpisodeLog flat_log(int samples, double error, double score) {
    EpisodeLog log;
    log.joints = 2;
    for (int k = 0; k < samples; ++k) {
        log.t.push_back(k * 0.01);
        log.s.push_back(score);
        for (int i = 0; i < 2; ++i) {
            log.q.push_back(0.1 * k);
            log.q_d.push_back(0.1 * k + error);
        }
    }
    return log;
}

}  // namespace

TEST(Gp, SinglePointPosterior) {
    GpConfig cfg;
    cfg.center_costs = false;
    GaussianProcess gp(cfg);
    MatrixXd X(1, 1);
    X << 0.5;
    gp.fit(X, vec({2.0}));
    // Single sample: unit signal variance, posterior k(x, x0) y / (1 + jitter).
    const double j = gp.jitter_used();
    const VectorXd x = vec({0.6});
    const double k = std::exp(-0.5 * 0.01 / 0.04);
    EXPECT_NEAR(gp.predict(x).mean, k * 2.0 / (1.0 + j), 1e-12);
    EXPECT_NEAR(gp.predict(x).variance, 1.0 - k * k / (1.0 + j), 1e-12);
}

TEST(Gp, InterpolatesSamples) {
    GaussianProcess gp;
    MatrixXd X(4, 2);
    X << 0.1, 0.1, 0.9, 0.2, 0.4, 0.8, 0.6, 0.5;
    const VectorXd y = vec({1.0, 3.0, -2.0, 0.5});
    gp.fit(X, y);
    for (Eigen::Index i = 0; i < 4; ++i) {
        const auto p = gp.predict(VectorXd(X.row(i).transpose()));
        EXPECT_NEAR(p.mean, y[i], 1e-5);
        EXPECT_LT(p.variance, 1e-5 * gp.signal_variance());
    }
    EXPECT_NEAR(gp.prior_mean(), y.mean(), 1e-15);
}

TEST(Gp, RevertsToPriorFarFromData) {
    GaussianProcess gp;
    MatrixXd X(2, 1);
    X << 0.0, 0.1;
    gp.fit(X, vec({1.0, 2.0}));
    const auto p = gp.predict(vec({2.0}));
    EXPECT_NEAR(p.mean, 1.5, 1e-8);
    EXPECT_NEAR(p.variance, gp.signal_variance(), 1e-8);
}

TEST(Gp, PredictBeforeFitThrows) {
    GaussianProcess gp;
    EXPECT_THROW(gp.predict(vec({0.1})), std::logic_error);
    EXPECT_THROW(gp.fit(MatrixXd(0, 1), VectorXd()), std::invalid_argument);
}

TEST(Gp, ProposalsStayInsideBounds) {
    GaussianProcess gp;
    Rng rng(3);
    MatrixXd X(6, 3);
    VectorXd y(6);
    for (int i = 0; i < 6; ++i) {
        for (int d = 0; d < 3; ++d) X(i, d) = rng.uniform();
        y[i] = X.row(i).squaredNorm();
    }
    gp.fit(X, y);
    const VectorXd lo = vec({0.2, 0.0, 0.5}), hi = vec({0.4, 1.0, 0.6});
    for (int k = 0; k < 10; ++k) {
        const VectorXd x = propose_lcb(gp, lo, hi, VectorXd(X.row(0).transpose()), rng);
        EXPECT_TRUE((x.array() >= lo.array()).all() && (x.array() <= hi.array()).all());
    }
}

TEST(Gp, ZeroExplorationMinimizesPosteriorMean) {
    GpConfig cfg;
    cfg.upsilon = 0.0;
    GaussianProcess gp(cfg);
    MatrixXd X(5, 1);
    X << 0.0, 0.25, 0.5, 0.75, 1.0;
    gp.fit(X, vec({1.0, 0.3, 0.1, 0.4, 1.2}));
    Rng rng(1);
    const VectorXd x = propose_lcb(gp, vec({0.0}), vec({1.0}), vec({0.5}), rng);
    double best = 1e9, arg = 0.0;
    for (int k = 0; k <= 10000; ++k) {
        const double m = gp.predict(vec({k / 1e4})).mean;
        if (m < best) best = m, arg = k / 1e4;
    }
    EXPECT_NEAR(x[0], arg, 1e-3);
}

TEST(Gp, BoxMinimizerFindsInteriorAndBoundaryOptima) {
    auto f = [](const VectorXd& x) { return (x - vec({0.3, 2.0})).squaredNorm(); };
    const VectorXd x = minimize_in_box(f, vec({0.9, 0.5}), vec({0.0, 0.0}), vec({1.0, 1.0}), {});
    EXPECT_NEAR(x[0], 0.3, 1e-5);
    EXPECT_EQ(x[1], 1.0);
}

TEST(HilCost, PerfectTrackingWithoutScoreIsZero) {
    const auto c = hil_cost(CostConfig{0.5}, flat_log(50, 0.0, 0.0));
    EXPECT_EQ(c.total, 0.0);
    EXPECT_EQ(c.samples, 50);
}

TEST(HilCost, HandComputedTerms) {
    const EpisodeLog log = flat_log(20, 0.1, 3.0);
    const auto track = hil_cost(CostConfig{1.0}, log);
    EXPECT_NEAR(track.total, 2 * 0.01, 1e-12);
    const auto anom = hil_cost(CostConfig{0.0}, log);
    EXPECT_NEAR(anom.total, 3.0, 1e-12);
    const auto mix = hil_cost(CostConfig{0.25}, log, 5, 15);
    EXPECT_NEAR(mix.total, 0.25 * 0.02 + 0.75 * 3.0, 1e-12);
    EXPECT_EQ(mix.samples, 10);
}

TEST(HilCost, RejectsBadInput) {
    EpisodeLog log = flat_log(20, 0.1, 1.0);
    EXPECT_THROW(hil_cost(CostConfig{0.5}, log, 0, 9), std::invalid_argument);
    EXPECT_THROW(hil_cost(CostConfig{1.5}, log), std::invalid_argument);
    log.s.clear();
    EXPECT_THROW(hil_cost(CostConfig{0.5}, log), std::invalid_argument);
}

TEST(Hil, AllFrozenGivesConstantTrace) {
    HilConfig cfg;
    cfg.iterations = 6;
    cfg.frozen = 3;
    const VectorXd x0 = vec({1.0, 2.0, 3.0});
    int calls = 0;
    const auto r = hil_optimize(x0, [&](const VectorXd& x, int) { ++calls; return x.sum(); }, cfg, 1);
    EXPECT_EQ(calls, 6);
    for (const auto& it : r.trace) EXPECT_EQ(it.params, x0);
    EXPECT_EQ(r.best, x0);
}

TEST(Hil, IncumbentIsMonotoneAndBoundsOnlyShrink) {
    HilConfig cfg;
    cfg.iterations = 40;
    cfg.frozen = 1;
    cfg.stall_limit = 3;
    const VectorXd x0 = vec({1.0, 1.0, 1.0, 1.0});
    const VectorXd target = vec({1.0, 1.1, 0.85, 1.2});
    Rng noise(2);
    const auto r = hil_optimize(
        x0, [&](const VectorXd& x, int) { return (x - target).squaredNorm() + 1e-3 * noise.uniform(); }, cfg, 5);
    ASSERT_EQ(r.trace.size(), 40u);
    EXPECT_EQ(r.trace.front().params, x0);
    for (std::size_t k = 1; k < r.trace.size(); ++k) {
        EXPECT_LE(r.trace[k].incumbent, r.trace[k - 1].incumbent);
        EXPECT_LE(r.trace[k].bound_width, r.trace[k - 1].bound_width + 1e-15);
        EXPECT_EQ(r.trace[k].params[0], 1.0);
        for (Eigen::Index i = 1; i < 4; ++i) EXPECT_LE(std::abs(r.trace[k].params[i] - 1.0), 0.3 + 1e-12);
    }
    EXPECT_EQ(r.best_cost, r.trace.back().incumbent);
    EXPECT_LT(r.best_cost, r.trace.front().cost);
}

TEST(Hil, DivergedEpisodesArePenalized) {
    HilConfig cfg;
    cfg.iterations = 5;
    cfg.frozen = 0;
    const auto r = hil_optimize(
        vec({1.0}),
        [&](const VectorXd& x, int it) {
            if (it == 3) throw DivergenceError("boom");
            return x[0] * x[0];
        },
        cfg, 1);
    EXPECT_TRUE(r.trace[2].diverged);
    double worst = 0.0;
    for (int k = 0; k < 2; ++k) worst = std::max(worst, r.trace[static_cast<std::size_t>(k)].cost);
    EXPECT_NEAR(r.trace[2].cost, 10.0 * worst, 1e-12);
}

TEST(Hil, RunsAreReproducible) {
    HilConfig cfg;
    cfg.iterations = 15;
    cfg.frozen = 0;
    auto f = [](const VectorXd& x, int) { return (x.array() - 0.9).square().sum(); };
    const auto a = hil_optimize(vec({1.0, 1.0}), f, cfg, 7), b = hil_optimize(vec({1.0, 1.0}), f, cfg, 7);
    for (std::size_t k = 0; k < a.trace.size(); ++k) EXPECT_EQ(a.trace[k].params, b.trace[k].params);
    const auto rs = random_search(vec({1.0, 1.0}), f, cfg, 7);
    EXPECT_EQ(rs.trace.size(), 15u);
    EXPECT_EQ(rs.trace.front().params, vec({1.0, 1.0}));
}

TEST(Hil, CalibratedFrequencyMatchesCadence) {
    const auto subject = sample_population(2, 4)[1];
    EXPECT_NEAR(calibrate_frequency(subject, 20.0) / (kTwoPi * subject.cadence), 1.0, 0.01);
}
