#pragma once

// Acceleration-free disturbance observer:
//   y'    = -L y - L [K (theta - q) - C q' - g + p]
//   tau^  = y + p,   L = A^-1 M^-1,   p = A^-1 q'
// with A^-1 = (sigma1 + 2 beta sigma2) / 2 * I.

#include "exo/common.hpp"
#include "exo/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <limits>
#include <vector>

namespace exo {

struct WorkspaceRanges {
    JointVec q_lo, q_hi;  // rad
    JointVec qd_max;      // rad/s, symmetric

    static WorkspaceRanges knee_default(int n) {
        return {JointVec::Constant(n, -0.5), JointVec::Constant(n, 2.3), JointVec::Constant(n, 10.0)};
    }
};

struct ObserverBounds {
    double sigma1 = 0.0;  // >= max ||M'||
    double sigma2 = 0.0;  // >= max ||M||
    double raw_sigma1 = 0.0;
    double raw_sigma2 = 0.0;
};

inline double spectral_norm(const JointMat& m) {
    if (m.size() == 0) return 0.0;
    const MatrixXd dense = m;
    Eigen::JacobiSVD<MatrixXd> svd(dense);
    return svd.singularValues()[0];
}

inline double sym_eig_min(const JointMat& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(MatrixXd(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

inline double sym_eig_max(const JointMat& m) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(MatrixXd(m), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

/// Grid maxima of ||M(q)|| and ||M'(q, q')|| over the workspace (about `samples`
/// grid points over (q, q')), inflated by `inflation`.
inline ObserverBounds compute_bounds(const RobotParams& p, const WorkspaceRanges& ws, long samples = 10000,
                                     double inflation = 0.1) {
    p.validate();
    const int n = p.n;
    if (ws.q_lo.size() != n || ws.q_hi.size() != n || ws.qd_max.size() != n)
        throw std::invalid_argument("compute_bounds: range dimensions must match the plant");
    const int dims = 2 * n;
    const int per_dim = std::max(2, static_cast<int>(std::ceil(std::pow(static_cast<double>(samples), 1.0 / dims))));
    std::vector<int> idx(static_cast<std::size_t>(dims), 0);
    ObserverBounds b;
    JointVec q(n), qd(n);
    for (;;) {
        for (int i = 0; i < n; ++i) {
            const double u = static_cast<double>(idx[static_cast<std::size_t>(i)]) / (per_dim - 1);
            q[i] = ws.q_lo[i] + u * (ws.q_hi[i] - ws.q_lo[i]);
            const double v = static_cast<double>(idx[static_cast<std::size_t>(n + i)]) / (per_dim - 1);
            qd[i] = -ws.qd_max[i] + 2.0 * v * ws.qd_max[i];
        }
        b.raw_sigma2 = std::max(b.raw_sigma2, spectral_norm(mass_matrix(p, q)));
        b.raw_sigma1 = std::max(b.raw_sigma1, spectral_norm(mass_matrix_dot(p, q, qd)));
        int d = 0;
        while (d < dims && ++idx[static_cast<std::size_t>(d)] == per_dim) idx[static_cast<std::size_t>(d++)] = 0;
        if (d == dims) break;
    }
    b.sigma1 = (1.0 + inflation) * b.raw_sigma1;
    b.sigma2 = (1.0 + inflation) * b.raw_sigma2;
    return b;
}

struct ObserverConfig {
    double beta = 100.0;
    double rho = 0.5;

    void validate() const {
        if (!(beta > 0.0)) throw std::invalid_argument("observer: beta must be positive");
        if (!(rho > 0.0 && rho < 1.0)) throw std::invalid_argument("observer: rho must lie in (0, 1)");
    }
};

class DisturbanceObserver {
public:
    DisturbanceObserver(RobotParams params, const ObserverBounds& bounds, const ObserverConfig& cfg = {})
        : p_(std::move(params)), bounds_(bounds), cfg_(cfg) {
        p_.validate();
        cfg_.validate();
        a_inv_ = 0.5 * (bounds.sigma1 + 2.0 * cfg_.beta * bounds.sigma2);
        if (!(a_inv_ > 0.0)) throw std::invalid_argument("observer: A must be invertible");
        y_ = JointVec::Zero(p_.n);
        estimate_ = JointVec::Zero(p_.n);
    }

    /// Start with estimate `tau_hat0` (zero by default) at the given robot state.
    void reset(const RobotState& s, const JointVec& tau_hat0) {
        y_ = tau_hat0 - a_inv_ * s.qd;
        estimate_ = tau_hat0;
        gamma_min_seen_ = std::numeric_limits<double>::infinity();
    }
    void reset(const RobotState& s) { reset(s, JointVec::Zero(p_.n)); }

    /// Integrate y over one step. Between samples q and theta follow the cubic Hermite
    /// interpolant of positions and velocities; q' is its derivative.
    void step(const RobotState& prev, const RobotState& cur, double dt) {
        if (!(dt > 0.0)) throw std::invalid_argument("observer_step: dt must be positive");
        auto hermite = [&](double a, const JointVec& x0, const JointVec& v0, const JointVec& x1, const JointVec& v1) {
            const double a2 = a * a, a3 = a2 * a;
            return JointVec((2 * a3 - 3 * a2 + 1) * x0 + (a3 - 2 * a2 + a) * dt * v0 + (3 * a2 - 2 * a3) * x1 +
                            (a3 - a2) * dt * v1);
        };
        auto hermite_rate = [&](double a, const JointVec& x0, const JointVec& v0, const JointVec& x1, const JointVec& v1) {
            const double a2 = a * a;
            return JointVec((6 * a2 - 6 * a) / dt * x0 + (3 * a2 - 4 * a + 1) * v0 + (6 * a - 6 * a2) / dt * x1 +
                            (3 * a2 - 2 * a) * v1);
        };
        auto rhs = [&](double a, const JointVec& y) {
            const JointVec q = hermite(a, prev.q, prev.qd, cur.q, cur.qd);
            const JointVec qd = hermite_rate(a, prev.q, prev.qd, cur.q, cur.qd);
            const JointVec th = hermite(a, prev.theta, prev.thetad, cur.theta, cur.thetad);
            const JointMat M = mass_matrix(p_, q);
            const JointVec inner = p_.stiffness.cwiseProduct(th - q) - coriolis(p_, q, qd) * qd - gravity_vec(p_, q) +
                                   a_inv_ * qd + y;
            return JointVec(-a_inv_ * M.llt().solve(inner));
        };
        const JointVec k1 = rhs(0.0, y_);
        const JointVec k2 = rhs(0.5, y_ + 0.5 * dt * k1);
        const JointVec k3 = rhs(0.5, y_ + 0.5 * dt * k2);
        const JointVec k4 = rhs(1.0, y_ + dt * k3);
        y_ += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        estimate_ = y_ + a_inv_ * cur.qd;
        if (!estimate_.allFinite()) throw DivergenceError("observer: non-finite estimate at t=" + std::to_string(cur.t));
        gamma_min_seen_ = std::min(gamma_min_seen_, gamma_min(cur));
    }

    const JointVec& estimate() const { return estimate_; }
    const JointVec& auxiliary() const { return y_; }
    double a_inverse() const { return a_inv_; }
    double a_norm() const { return 1.0 / a_inv_; }
    const ObserverBounds& bounds() const { return bounds_; }
    const ObserverConfig& config() const { return cfg_; }

    JointMat A() const { return JointMat::Identity(p_.n, p_.n) / a_inv_; }

    /// Gamma = A + A^T - A^T M' A at the given state.
    JointMat gamma(const RobotState& s) const {
        const JointMat A_ = A();
        return A_ + A_.transpose() - A_.transpose() * mass_matrix_dot(p_, s.q, s.qd) * A_;
    }
    double gamma_min(const RobotState& s) const { return sym_eig_min(gamma(s)); }

    /// Smallest eigenvalue of Gamma seen since the last reset.
    double gamma_min_seen() const { return gamma_min_seen_; }

    /// Ultimate-bound radius for ||tau_e'|| <= zeta.
    double ultimate_bound(double zeta, double lambda_max_M, double lambda_min_Gamma) const {
        if (!(lambda_min_Gamma > 0.0)) throw std::invalid_argument("ultimate_bound: Gamma is not positive definite");
        const double nA = a_norm();
        return 2.0 * zeta * lambda_max_M * nA * nA / (cfg_.rho * lambda_min_Gamma);
    }

private:
    RobotParams p_;
    ObserverBounds bounds_;
    ObserverConfig cfg_;
    double a_inv_ = 0.0;
    JointVec y_, estimate_;
    double gamma_min_seen_ = std::numeric_limits<double>::infinity();
};

}  // namespace exo
