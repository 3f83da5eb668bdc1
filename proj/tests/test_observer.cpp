#include "exo/controller.hpp"
#include "exo/observer.hpp"

#include <gtest/gtest.h>

using namespace exo;

namespace {

JointVec vec2(double a, double b) { return (JointVec(2) << a, b).finished(); }

// Knees held near q0 by the impedance controller while tau_e acts; returns the final estimate error.
double track_disturbance(const JointVec& tau_e, double seconds, JointVec* estimate = nullptr) {
    const auto p = RobotParams::knees();
    const auto bounds = compute_bounds(p, WorkspaceRanges::knee_default(2));
    DisturbanceObserver obs(p, bounds);
    ImpedanceController ctrl(ImpedanceConfig::for_joints(2));
    RobotState s = RobotState::zero(2);
    s.q = vec2(0.3, 0.6);
    s.theta = preloaded_rotor(p, s.q);
    obs.reset(s);
    const DesiredState d{s.q, JointVec::Zero(2), JointVec::Zero(2)};
    const double dt = 1e-3;
    for (long k = 0; k < std::lround(seconds / dt); ++k) {
        const auto out = ctrl.step(p, s, d, obs.estimate(), 0.0, dt);
        const RobotState next = step(p, s, out.u, tau_e, dt);
        obs.step(s, next, dt);
        s = next;
    }
    if (estimate) *estimate = obs.estimate();
    return (obs.estimate() - tau_e).norm();
}

}  // namespace

TEST(Observer, SingleLinkHasNoInertiaRate) {
    const auto b = compute_bounds(RobotParams::single_link(), WorkspaceRanges::knee_default(1));
    EXPECT_EQ(b.raw_sigma1, 0.0);
    EXPECT_GT(b.sigma2, 0.0);
}

TEST(Observer, InertiaBoundScalesWithMass) {
    auto p = RobotParams::knees();
    const auto a = compute_bounds(p, WorkspaceRanges::knee_default(2));
    p.mass *= 2.0;
    p.inertia *= 2.0;
    const auto b = compute_bounds(p, WorkspaceRanges::knee_default(2));
    EXPECT_NEAR(b.raw_sigma2 / a.raw_sigma2, 2.0, 1e-12);
}

TEST(Observer, BoundsCoverSampledInertia) {
    const auto p = RobotParams::two_link();
    const auto ws = WorkspaceRanges::knee_default(2);
    const auto b = compute_bounds(p, ws);
    Rng rng(6);
    for (int k = 0; k < 1000; ++k) {
        const JointVec q = vec2(rng.uniform(ws.q_lo[0], ws.q_hi[0]), rng.uniform(ws.q_lo[1], ws.q_hi[1]));
        const JointVec qd = vec2(rng.uniform(-10, 10), rng.uniform(-10, 10));
        EXPECT_LE(spectral_norm(mass_matrix(p, q)), b.sigma2);
        EXPECT_LE(spectral_norm(mass_matrix_dot(p, q, qd)), b.sigma1);
    }
}

TEST(Observer, GainMatrixIsPositiveDefinite) {
    const auto p = RobotParams::two_link();
    DisturbanceObserver obs(p, compute_bounds(p, WorkspaceRanges::knee_default(2)));
    Rng rng(8);
    for (int k = 0; k < 500; ++k) {
        RobotState s = RobotState::zero(2);
        s.q = vec2(rng.uniform(-0.5, 2.3), rng.uniform(-0.5, 2.3));
        s.qd = vec2(rng.uniform(-10, 10), rng.uniform(-10, 10));
        EXPECT_GT(obs.gamma_min(s), 0.0);
    }
}

TEST(Observer, ZeroDisturbanceStaysZero) { EXPECT_LT(track_disturbance(JointVec::Zero(2), 1.0), 1e-6); }

TEST(Observer, RecoversConstantDisturbance) {
    JointVec est;
    EXPECT_LT(track_disturbance(vec2(2.0, -1.0), 0.5, &est), 1e-3);
    EXPECT_NEAR(est[0], 2.0, 1e-3);
    EXPECT_NEAR(est[1], -1.0, 1e-3);
}

TEST(Observer, ResetSetsEstimate) {
    const auto p = RobotParams::knees();
    DisturbanceObserver obs(p, compute_bounds(p, WorkspaceRanges::knee_default(2)));
    obs.reset(RobotState::zero(2), vec2(1.0, 2.0));
    EXPECT_EQ(obs.estimate(), vec2(1.0, 2.0));
    EXPECT_THROW(obs.step(RobotState::zero(2), RobotState::zero(2), 0.0), std::invalid_argument);
    EXPECT_THROW(obs.ultimate_bound(1.0, 1.0, 0.0), std::invalid_argument);
}
