#pragma once

// SEA-driven planar plant:
//   M(q) q'' + C(q, q') q' + g(q) = K (theta - q) + tau_e
//   B theta'' + K (theta - q) = u
// Angles are measured from the downward vertical.

#include "exo/common.hpp"

#include <string>

namespace exo {

enum class Topology {
    chain,      // coupled serial chain, n in {1, 2}
    decoupled,  // n independent single-link joints (two knees)
};

struct RobotParams {
    int n = 2;
    Topology topology = Topology::decoupled;
    JointVec mass, length, com, inertia;
    JointVec stiffness;  // diagonal of K
    JointVec rotor;      // diagonal of B
    double g0 = 9.81;

    static RobotParams make(int n, Topology topology) {
        RobotParams p;
        p.n = n;
        p.topology = topology;
        p.mass = JointVec::Constant(n, 3.0);
        p.length = JointVec::Constant(n, 0.4);
        p.com = JointVec::Constant(n, 0.2);
        p.inertia = JointVec::Constant(n, 0.05);
        p.stiffness = JointVec::Constant(n, 635.0);
        p.rotor = JointVec::Constant(n, 0.05);
        return p;
    }

    /// Default walking plant: left and right knee.
    static RobotParams knees() { return make(2, Topology::decoupled); }
    static RobotParams two_link() { return make(2, Topology::chain); }
    static RobotParams single_link() { return make(1, Topology::chain); }

    JointMat K() const { return stiffness.asDiagonal(); }
    JointMat B() const { return rotor.asDiagonal(); }

    void validate() const {
        if (n < 1 || n > kMaxDof) throw std::invalid_argument("RobotParams: n must be 1 or 2");
        for (const JointVec* v : {&mass, &length, &com, &inertia, &stiffness, &rotor})
            if (v->size() != n) throw std::invalid_argument("RobotParams: per-joint vectors must have length n");
        if ((mass.array() <= 0.0).any() || (length.array() <= 0.0).any())
            throw std::invalid_argument("RobotParams: masses and lengths must be positive");
        if ((inertia.array() < 0.0).any() || (com.array() < 0.0).any())
            throw std::invalid_argument("RobotParams: inertias and COM offsets must be non-negative");
        if ((stiffness.array() <= 0.0).any() || (rotor.array() <= 0.0).any())
            throw std::invalid_argument("RobotParams: K and B must be positive definite");
        if (!std::isfinite(g0)) throw std::invalid_argument("RobotParams: gravity must be finite");
    }
};

struct RobotState {
    JointVec q, qd, theta, thetad;
    double t = 0.0;

    static RobotState zero(int n) {
        return {JointVec::Zero(n), JointVec::Zero(n), JointVec::Zero(n), JointVec::Zero(n), 0.0};
    }

    /// SEA output torque K (theta - q).
    JointVec spring_torque(const RobotParams& p) const { return p.stiffness.cwiseProduct(theta - q); }

    bool finite() const {
        return q.allFinite() && qd.allFinite() && theta.allFinite() && thetad.allFinite() && std::isfinite(t);
    }
};

inline JointMat mass_matrix(const RobotParams& p, const JointVec& q) {
    const int n = p.n;
    JointMat M = JointMat::Zero(n, n);
    if (p.topology == Topology::decoupled || n == 1) {
        for (int i = 0; i < n; ++i) M(i, i) = p.mass[i] * p.com[i] * p.com[i] + p.inertia[i];
        return M;
    }
    const double m1 = p.mass[0], m2 = p.mass[1], l1 = p.length[0], lc1 = p.com[0], lc2 = p.com[1];
    const double c2 = std::cos(q[1]);
    M(0, 0) = m1 * lc1 * lc1 + p.inertia[0] + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * c2) + p.inertia[1];
    M(0, 1) = m2 * (lc2 * lc2 + l1 * lc2 * c2) + p.inertia[1];
    M(1, 0) = M(0, 1);
    M(1, 1) = m2 * lc2 * lc2 + p.inertia[1];
    return M;
}

/// Time derivative of M along (q, q').
inline JointMat mass_matrix_dot(const RobotParams& p, const JointVec& q, const JointVec& qd) {
    JointMat Md = JointMat::Zero(p.n, p.n);
    if (p.topology == Topology::decoupled || p.n == 1) return Md;
    const double m2 = p.mass[1], l1 = p.length[0], lc2 = p.com[1];
    const double d = -m2 * l1 * lc2 * std::sin(q[1]) * qd[1];
    Md(0, 0) = 2.0 * d;
    Md(0, 1) = d;
    Md(1, 0) = d;
    return Md;
}

/// Christoffel-form Coriolis matrix, so that M' - 2C is skew-symmetric.
inline JointMat coriolis(const RobotParams& p, const JointVec& q, const JointVec& qd) {
    JointMat C = JointMat::Zero(p.n, p.n);
    if (p.topology == Topology::decoupled || p.n == 1) return C;
    const double h = -p.mass[1] * p.length[0] * p.com[1] * std::sin(q[1]);
    C(0, 0) = h * qd[1];
    C(0, 1) = h * (qd[0] + qd[1]);
    C(1, 0) = -h * qd[0];
    return C;
}

inline JointVec gravity_vec(const RobotParams& p, const JointVec& q) {
    JointVec g(p.n);
    if (p.topology == Topology::decoupled || p.n == 1) {
        for (int i = 0; i < p.n; ++i) g[i] = p.mass[i] * p.g0 * p.com[i] * std::sin(q[i]);
        return g;
    }
    const double s12 = std::sin(q[0] + q[1]);
    g[0] = p.mass[0] * p.g0 * p.com[0] * std::sin(q[0]) + p.mass[1] * p.g0 * (p.length[0] * std::sin(q[0]) + p.com[1] * s12);
    g[1] = p.mass[1] * p.g0 * p.com[1] * s12;
    return g;
}

inline double potential_energy(const RobotParams& p, const JointVec& q) {
    if (p.topology == Topology::decoupled || p.n == 1) {
        double v = 0.0;
        for (int i = 0; i < p.n; ++i) v += p.mass[i] * p.g0 * p.com[i] * (1.0 - std::cos(q[i]));
        return v;
    }
    return p.mass[0] * p.g0 * p.com[0] * (1.0 - std::cos(q[0])) +
           p.mass[1] * p.g0 * (p.length[0] * (1.0 - std::cos(q[0])) + p.com[1] * (1.0 - std::cos(q[0] + q[1])));
}

/// Kinetic + gravitational + spring energy; conserved when u = 0 and tau_e = 0.
inline double total_energy(const RobotParams& p, const RobotState& s) {
    const JointVec defl = s.theta - s.q;
    return 0.5 * s.qd.dot(mass_matrix(p, s.q) * s.qd) + 0.5 * s.thetad.dot(p.rotor.cwiseProduct(s.thetad)) +
           0.5 * defl.dot(p.stiffness.cwiseProduct(defl)) + potential_energy(p, s.q);
}

/// Link and rotor accelerations for the given state and inputs.
inline void accelerations(const RobotParams& p, const JointVec& q, const JointVec& qd, const JointVec& theta,
                          const JointVec& u, const JointVec& tau_e, JointVec& qdd, JointVec& thetadd) {
    const JointVec spring = p.stiffness.cwiseProduct(theta - q);
    const JointVec rhs = spring + tau_e - coriolis(p, q, qd) * qd - gravity_vec(p, q);
    qdd = mass_matrix(p, q).llt().solve(rhs);
    thetadd = (u - spring).cwiseQuotient(p.rotor);
}

/// One RK4 step with u and tau_e held constant over the step.
inline RobotState step(const RobotParams& p, const RobotState& s, const JointVec& u, const JointVec& tau_e, double dt) {
    if (!(dt > 0.0 && dt <= 0.01)) throw std::invalid_argument("step: dt must lie in (0, 0.01]");
    if (u.size() != p.n || tau_e.size() != p.n || s.q.size() != p.n)
        throw std::invalid_argument("step: input dimension does not match plant");
    if (!u.allFinite() || !tau_e.allFinite()) throw DivergenceError("step: non-finite input at t=" + std::to_string(s.t));

    struct Deriv {
        JointVec dq, dqd, dth, dthd;
    };
    auto f = [&](const JointVec& q, const JointVec& qd, const JointVec& th, const JointVec& thd) {
        Deriv d;
        d.dq = qd;
        d.dth = thd;
        accelerations(p, q, qd, th, u, tau_e, d.dqd, d.dthd);
        return d;
    };

    const Deriv k1 = f(s.q, s.qd, s.theta, s.thetad);
    const double h2 = 0.5 * dt;
    const Deriv k2 = f(s.q + h2 * k1.dq, s.qd + h2 * k1.dqd, s.theta + h2 * k1.dth, s.thetad + h2 * k1.dthd);
    const Deriv k3 = f(s.q + h2 * k2.dq, s.qd + h2 * k2.dqd, s.theta + h2 * k2.dth, s.thetad + h2 * k2.dthd);
    const Deriv k4 = f(s.q + dt * k3.dq, s.qd + dt * k3.dqd, s.theta + dt * k3.dth, s.thetad + dt * k3.dthd);

    const double w = dt / 6.0;
    RobotState out;
    out.q = s.q + w * (k1.dq + 2.0 * k2.dq + 2.0 * k3.dq + k4.dq);
    out.qd = s.qd + w * (k1.dqd + 2.0 * k2.dqd + 2.0 * k3.dqd + k4.dqd);
    out.theta = s.theta + w * (k1.dth + 2.0 * k2.dth + 2.0 * k3.dth + k4.dth);
    out.thetad = s.thetad + w * (k1.dthd + 2.0 * k2.dthd + 2.0 * k3.dthd + k4.dthd);
    out.t = s.t + dt;
    if (!out.finite()) throw DivergenceError("step: non-finite plant state at t=" + std::to_string(out.t));
    return out;
}

/// Rotor angle that makes the spring hold q statically against gravity.
inline JointVec preloaded_rotor(const RobotParams& p, const JointVec& q) {
    return q + gravity_vec(p, q).cwiseQuotient(p.stiffness);
}

}  // namespace exo
