#include "exo/controller.hpp"

#include <gtest/gtest.h>

using namespace exo;

namespace {

JointVec vec2(double a, double b) { return (JointVec(2) << a, b).finished(); }

}  // namespace

TEST(Controller, WeightingEndpoints) {
    const auto c = ImpedanceConfig::for_joints(2);
    EXPECT_DOUBLE_EQ(weighting(c, 120.0), 1.0);
    EXPECT_NEAR(weighting(c, 0.0), 2.0 - 2.0 / (std::exp(24.0) + 1.0), 1e-15);
    EXPECT_LT(weighting(c, 0.0), 2.0);
    EXPECT_THROW(weighting(c, -1e-9), std::invalid_argument);
}

TEST(Controller, WeightingIsDecreasingAndPositive) {
    const auto c = ImpedanceConfig::for_joints(2);
    Rng rng(4);
    for (int k = 0; k < 500; ++k) {
        const double a = rng.uniform(0.0, 239.0), b = rng.uniform(0.0, 239.0);
        const double lo = std::min(a, b), hi = std::max(a, b);
        if (hi - lo < 1e-6) continue;
        EXPECT_GT(weighting(c, lo), weighting(c, hi));
        EXPECT_GT(weighting(c, hi), 0.0);
        EXPECT_LE(weighting_slope(c, a), 0.0);
    }
}

TEST(Controller, ImpedanceVectorMatchesElementwiseFormula) {
    const auto c = ImpedanceConfig::for_joints(2);
    const JointVec q = vec2(0.3, -0.1), qd = vec2(1.0, 0.5), tau = vec2(4.0, -2.0);
    const DesiredState d{vec2(0.2, 0.0), vec2(0.8, 0.7), vec2(-1.0, 2.0)};
    const double w = 1.4;
    const auto t = impedance_vector(c, q, qd, d, tau, w);
    for (int i = 0; i < 2; ++i) {
        const double qdr = d.qd[i] - 13.0 / 15.0 * (q[i] - d.q[i]) + tau[i] / (w * 15.0);
        EXPECT_NEAR(t.qd_r[i], qdr, 1e-14);
        EXPECT_NEAR(t.z[i], qd[i] - qdr, 1e-14);
    }
}

TEST(Controller, PerfectTrackingGivesZeroImpedanceVector) {
    const auto c = ImpedanceConfig::for_joints(2);
    const DesiredState d{vec2(0.4, 1.0), vec2(-0.3, 0.2), vec2(0.0, 0.0)};
    const auto t = impedance_vector(c, d.q, d.qd, d, JointVec::Zero(2), 1.0);
    EXPECT_TRUE(t.z.isZero(0.0));
}

TEST(Controller, RestStateCommandsGravity) {
    const auto c = ImpedanceConfig::for_joints(2);
    const auto p = RobotParams::knees();
    RobotState s = RobotState::zero(2);
    s.q = vec2(0.5, 1.2);
    s.theta = preloaded_rotor(p, s.q);
    const DesiredState d{s.q, JointVec::Zero(2), JointVec::Zero(2)};
    const auto out = control_law(c, p, s, d, JointVec::Zero(2), 1.0, 0.0);
    EXPECT_LT((out.u_s - gravity_vec(p, s.q)).norm(), 1e-12);
    EXPECT_TRUE(out.u_f.isZero(0.0));
    EXPECT_FALSE(out.saturated);
}

TEST(Controller, FastTermVanishesWhenRotorMatchesLink) {
    const auto c = ImpedanceConfig::for_joints(2);
    const auto p = RobotParams::knees();
    RobotState s = RobotState::zero(2);
    s.qd = vec2(1.5, -0.7);
    s.thetad = s.qd;
    const DesiredState d{JointVec::Zero(2), JointVec::Zero(2), JointVec::Zero(2)};
    EXPECT_TRUE(control_law(c, p, s, d, JointVec::Zero(2), 1.0, 0.0).u_f.isZero(0.0));
    s.thetad[0] += 0.1;
    EXPECT_NEAR(control_law(c, p, s, d, JointVec::Zero(2), 1.0, 0.0).u_f[0], -20.0 * 0.1, 1e-12);
}

TEST(Controller, SaturationIsFlagged) {
    const auto c = ImpedanceConfig::for_joints(2);
    const auto p = RobotParams::knees();
    RobotState s = RobotState::zero(2);
    const DesiredState d{vec2(50.0, 0.0), JointVec::Zero(2), JointVec::Zero(2)};
    const auto out = control_law(c, p, s, d, JointVec::Zero(2), 1.0, 0.0);
    EXPECT_TRUE(out.saturated);
    EXPECT_LE(out.u.cwiseAbs().maxCoeff(), c.torque_limit);
}

TEST(Controller, ScoreFilterConvergesToInput) {
    ImpedanceController ctrl(ImpedanceConfig::for_joints(2));
    ctrl.reset();
    const auto p = RobotParams::knees();
    const RobotState s = RobotState::zero(2);
    const DesiredState d{JointVec::Zero(2), JointVec::Zero(2), JointVec::Zero(2)};
    ControlOutput out;
    for (int k = 0; k < 2000; ++k) out = ctrl.step(p, s, d, JointVec::Zero(2), 120.0, 1e-3);
    EXPECT_NEAR(ctrl.filtered_score(), 120.0, 1e-9);
    EXPECT_NEAR(out.w, 1.0, 1e-9);
    EXPECT_THROW(ctrl.step(p, s, d, JointVec::Zero(2), -1.0, 1e-3), std::invalid_argument);
}

TEST(Controller, BoundaryLayerEigenvaluesMatchQuadraticFormula) {
    const JointVec B = vec2(0.05, 0.05), K1 = vec2(6.35, 6.35), K2 = vec2(0.2, 0.2);
    const auto r = boundary_layer_check(B, K1, K2);
    EXPECT_TRUE(r.stable);
    const double disc = 0.2 * 0.2 - 4.0 * 0.05 * 6.35;
    const std::complex<double> root = (-0.2 + std::sqrt(std::complex<double>(disc))) / (2.0 * 0.05);
    for (const auto& ev : r.eigenvalues) {
        EXPECT_NEAR(ev.real(), root.real(), 1e-10);
        EXPECT_NEAR(std::abs(ev.imag()), std::abs(root.imag()), 1e-9);
    }
}

TEST(Controller, UndampedBoundaryLayerIsUnstable) {
    const auto r = boundary_layer_check(vec2(0.05, 0.05), vec2(6.35, 6.35), JointVec::Zero(2));
    EXPECT_FALSE(r.stable);
    EXPECT_EQ(r.min_damping, 0.0);
}

TEST(Controller, RejectsInvalidGains) {
    auto c = ImpedanceConfig::for_joints(2);
    c.C_d[1] = 0.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = ImpedanceConfig::for_joints(2);
    EXPECT_THROW(impedance_vector(c, JointVec::Zero(2), JointVec::Zero(2), {JointVec::Zero(2), JointVec::Zero(2), JointVec::Zero(2)},
                                  JointVec::Zero(2), 0.0),
                 std::invalid_argument);
}
