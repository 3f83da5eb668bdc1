#pragma once

// Two-time-scale variable impedance controller.
//   w(s)  = lambda1 tanh(-s / chi1 + chi2) + lambda2
//   z     = q' - q_d' + Cd^-1 Kd (q - q_d) - (1/w) Cd^-1 tau^
//   u_s   = -Kz z - tau^ - kg sgn(z) + (M + B) q_r'' + C q_r' + g
//   u_f   = -Kv (theta' - q')

#include "exo/common.hpp"
#include "exo/dynamics.hpp"

#include <Eigen/Eigenvalues>

#include <complex>
#include <vector>

namespace exo {

struct ImpedanceConfig {
    JointVec C_d = JointVec::Constant(2, 15.0);
    JointVec K_d = JointVec::Constant(2, 13.0);
    JointVec K_v = JointVec::Constant(2, 20.0);  // 1e-3 leaves the spring mode unstable on the default plant
    JointVec K_z = JointVec::Constant(2, 25.0);
    double lambda1 = 1.0, lambda2 = 1.0, chi1 = 10.0, chi2 = 12.0;
    double k_g = 2.0;
    double delta = 0.01;           // sign smoothing band
    double torque_limit = 200.0;   // N m
    double score_cutoff_hz = 5.0;  // low-pass on s before weighting
    double score_gain = 1.0;       // s is multiplied by this before the weighting function

    static ImpedanceConfig for_joints(int n) {
        ImpedanceConfig c;
        c.C_d = JointVec::Constant(n, 15.0);
        c.K_d = JointVec::Constant(n, 13.0);
        c.K_v = JointVec::Constant(n, 20.0);
        c.K_z = JointVec::Constant(n, 25.0);
        return c;
    }

    int joints() const { return static_cast<int>(C_d.size()); }

    void validate() const {
        const auto n = C_d.size();
        if (n < 1 || K_d.size() != n || K_v.size() != n || K_z.size() != n)
            throw std::invalid_argument("controller: gain vectors must share the joint count");
        if ((C_d.array() <= 0).any() || (K_d.array() <= 0).any() || (K_v.array() <= 0).any() || (K_z.array() <= 0).any())
            throw std::invalid_argument("controller: C_d, K_d, K_v, K_z must be positive definite");
        if (!(lambda1 > 0) || !(lambda2 > 0) || !(chi1 > 0)) throw std::invalid_argument("controller: lambda1, lambda2, chi1 must be positive");
        if (!(k_g >= 0) || !(delta > 0) || !(torque_limit > 0) || !(score_cutoff_hz > 0) || !(score_gain > 0))
            throw std::invalid_argument("controller: k_g >= 0 and delta, torque limit, score cutoff, score gain > 0 required");
    }
};

inline double weighting(const ImpedanceConfig& c, double s) {
    if (!(s >= 0.0)) throw std::invalid_argument("weighting: score must be >= 0");
    return c.lambda1 * std::tanh(-s / c.chi1 + c.chi2) + c.lambda2;
}

/// dw/ds
inline double weighting_slope(const ImpedanceConfig& c, double s) {
    const double th = std::tanh(-s / c.chi1 + c.chi2);
    return -c.lambda1 * (1.0 - th * th) / c.chi1;
}

struct DesiredState {
    JointVec q, qd, qdd;
};

struct ImpedanceTerms {
    JointVec z, qd_r, qdd_r;
};

/// Impedance vector and reference derivatives. `tau_hat_dot` may be zero when unavailable.
inline ImpedanceTerms impedance_vector(const ImpedanceConfig& c, const JointVec& q, const JointVec& qd, const DesiredState& d,
                                       const JointVec& tau_hat, const JointVec& tau_hat_dot, double w, double w_dot) {
    if (!(w > 0.0)) throw std::invalid_argument("impedance_vector: w must be positive");
    const JointVec ratio = c.K_d.cwiseQuotient(c.C_d);
    ImpedanceTerms t;
    t.qd_r = d.qd - ratio.cwiseProduct(q - d.q) + tau_hat.cwiseQuotient(c.C_d) / w;
    t.z = qd - t.qd_r;
    t.qdd_r = d.qdd - ratio.cwiseProduct(qd - d.qd) + tau_hat_dot.cwiseQuotient(c.C_d) / w -
              (w_dot / (w * w)) * tau_hat.cwiseQuotient(c.C_d);
    return t;
}

inline ImpedanceTerms impedance_vector(const ImpedanceConfig& c, const JointVec& q, const JointVec& qd, const DesiredState& d,
                                       const JointVec& tau_hat, double w) {
    return impedance_vector(c, q, qd, d, tau_hat, JointVec::Zero(q.size()), w, 0.0);
}

struct ControlOutput {
    JointVec z, qd_r, qdd_r;
    JointVec u_f, u_s, u;
    double w = 0.0;
    bool saturated = false;
};

inline JointVec smoothed_sign(const JointVec& z, double delta) {
    return (z / delta).cwiseMax(-1.0).cwiseMin(1.0);
}

/// Stateless control law for given weight and weight rate.
inline ControlOutput control_law(const ImpedanceConfig& c, const RobotParams& p, const RobotState& s, const DesiredState& d,
                                 const JointVec& tau_hat, double w, double w_dot) {
    if (!s.finite() || !tau_hat.allFinite() || !d.q.allFinite() || !d.qd.allFinite() || !d.qdd.allFinite())
        throw DivergenceError("control_step: non-finite input at t=" + std::to_string(s.t));
    ControlOutput out;
    const ImpedanceTerms t = impedance_vector(c, s.q, s.qd, d, tau_hat, JointVec::Zero(p.n), w, w_dot);
    out.z = t.z;
    out.qd_r = t.qd_r;
    out.qdd_r = t.qdd_r;
    out.w = w;
    JointMat MB = mass_matrix(p, s.q);
    MB.diagonal() += p.rotor;
    out.u_s = -c.K_z.cwiseProduct(t.z) - tau_hat - c.k_g * smoothed_sign(t.z, c.delta) + MB * t.qdd_r +
              coriolis(p, s.q, s.qd) * t.qd_r + gravity_vec(p, s.q);
    out.u_f = -c.K_v.cwiseProduct(s.thetad - s.qd);
    const JointVec raw = out.u_s + out.u_f;
    out.u = raw.cwiseMax(-c.torque_limit).cwiseMin(c.torque_limit);
    out.saturated = (out.u.array() != raw.array()).any();
    return out;
}

/// Controller with the score low-pass state; one instance per episode.
class ImpedanceController {
public:
    explicit ImpedanceController(ImpedanceConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const ImpedanceConfig& config() const { return cfg_; }

    void reset(double score = 0.0) {
        s_filt_ = score * cfg_.score_gain;
        s_rate_ = 0.0;
    }

    /// Filter the raw score over dt, then compute the control command.
    ControlOutput step(const RobotParams& p, const RobotState& s, const DesiredState& d, const JointVec& tau_hat,
                       double score, double dt) {
        if (!(score >= 0.0)) throw std::invalid_argument("control_step: score must be >= 0");
        const double a = kTwoPi * cfg_.score_cutoff_hz;
        s_rate_ = a * (score * cfg_.score_gain - s_filt_);
        s_filt_ += (1.0 - std::exp(-a * dt)) * (score * cfg_.score_gain - s_filt_);
        const double w = weighting(cfg_, s_filt_);
        const double w_dot = weighting_slope(cfg_, s_filt_) * s_rate_;
        return control_law(cfg_, p, s, d, tau_hat, w, w_dot);
    }

    double filtered_score() const { return s_filt_; }

private:
    ImpedanceConfig cfg_;
    double s_filt_ = 0.0;
    double s_rate_ = 0.0;
};

/// Fast subsystem B eta'' + K2 eta' + K1 eta = 0 with K1 = eps^2 K and K2 = eps Kv.
struct BoundaryLayerReport {
    double epsilon = 0.0;
    JointVec K1, K2;
    std::vector<std::complex<double>> eigenvalues;
    double max_real = 0.0;     // stability margin is -max_real
    double min_damping = 0.0;  // smallest damping ratio over channels
    bool stable = false;
};

inline BoundaryLayerReport boundary_layer_check(const JointVec& B, const JointVec& K1, const JointVec& K2) {
    const auto n = B.size();
    if (K1.size() != n || K2.size() != n) throw std::invalid_argument("boundary_layer_check: dimension mismatch");
    MatrixXd A = MatrixXd::Zero(2 * n, 2 * n);
    A.topRightCorner(n, n).setIdentity();
    for (Eigen::Index i = 0; i < n; ++i) {
        A(n + i, i) = -K1[i] / B[i];
        A(n + i, n + i) = -K2[i] / B[i];
    }
    Eigen::EigenSolver<MatrixXd> es(A, false);
    BoundaryLayerReport r;
    r.K1 = K1;
    r.K2 = K2;
    r.max_real = -std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
        r.eigenvalues.push_back(es.eigenvalues()[k]);
        r.max_real = std::max(r.max_real, es.eigenvalues()[k].real());
    }
    r.min_damping = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i)
        r.min_damping = std::min(r.min_damping, K2[i] / (2.0 * std::sqrt(std::max(K1[i], 1e-300) * B[i])));
    // Purely imaginary poles count as unstable for this purpose.
    r.stable = r.max_real < -1e-12 * (1.0 + A.cwiseAbs().maxCoeff());
    return r;
}

inline BoundaryLayerReport boundary_layer_check(const ImpedanceConfig& c, const RobotParams& p, double epsilon) {
    if (!(epsilon > 0.0)) throw std::invalid_argument("boundary_layer_check: epsilon must be positive");
    if (c.K_v.size() != p.n) throw std::invalid_argument("boundary_layer_check: gain size does not match plant");
    BoundaryLayerReport r = boundary_layer_check(p.rotor, epsilon * epsilon * p.stiffness, epsilon * c.K_v);
    r.epsilon = epsilon;
    return r;
}

}  // namespace exo
