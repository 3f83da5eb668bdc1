#pragma once

// Dynamic movement primitives.
//
// Rhythmic output system (per joint, phase phi advancing at Omega rad/s):
//   omega' = -Omega [alpha (beta q_d + omega) + sum(psi w) / sum(psi)]
//   q_d'   =  Omega omega
//   psi_j  = exp(h (cos(phi - c_j) - 1))
// q_d is the mean-removed trajectory; `offset` is added back on output.
//
// Discrete system (normalised time s = t / duration):
//   y' = z,  z' = alpha (beta (g - y) - z) + x (g - y0) F(x),  x' = -alpha_x x
// The forcing term is switched off for s >= 1 so the goal attractor alone holds the end posture.

#include "exo/common.hpp"
#include "exo/csv.hpp"

#include <functional>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace exo {

enum class MovementClass { rhythmic, discrete };

inline const char* to_string(MovementClass c) { return c == MovementClass::rhythmic ? "rhythmic" : "discrete"; }

struct DmpModel {
    MovementClass cls = MovementClass::rhythmic;
    int kernels = 20;
    double width = 50.0;  // h for rhythmic kernels
    VectorXd centers;
    VectorXd widths;  // discrete kernels only
    MatrixXd W;       // joints x kernels
    double alpha = 25.0;
    double beta = 6.25;
    double alpha_x = 4.6;   // discrete canonical decay
    double duration = 1.0;  // discrete movement time (s)
    VectorXd offset;        // rhythmic: mean; discrete: start value
    VectorXd goal;          // discrete only
    VectorXd phase_shift;   // rhythmic only, per joint (rad)

    int joints() const { return static_cast<int>(W.rows()); }

    static DmpModel rhythmic(int joints, int kernels) {
        if (joints < 1 || kernels < 2) throw std::invalid_argument("DmpModel: need >= 1 joint and >= 2 kernels");
        DmpModel m;
        m.cls = MovementClass::rhythmic;
        m.kernels = kernels;
        m.width = 2.5 * kernels;
        m.alpha = 5.0;  // lower stiffness keeps the kernel ripple out of q_d''
        m.beta = 1.25;
        m.centers.resize(kernels);
        for (int j = 0; j < kernels; ++j) m.centers[j] = kTwoPi * j / kernels;
        m.W = MatrixXd::Zero(joints, kernels);
        m.offset = VectorXd::Zero(joints);
        m.goal = VectorXd::Zero(joints);
        m.phase_shift = VectorXd::Zero(joints);
        return m;
    }

    static DmpModel discrete(int joints, int kernels, double duration) {
        if (joints < 1 || kernels < 2) throw std::invalid_argument("DmpModel: need >= 1 joint and >= 2 kernels");
        if (!(duration > 0.0)) throw std::invalid_argument("DmpModel: duration must be positive");
        DmpModel m;
        m.cls = MovementClass::discrete;
        m.kernels = kernels;
        m.duration = duration;
        m.set_discrete_kernels();
        m.W = MatrixXd::Zero(joints, kernels);
        m.offset = VectorXd::Zero(joints);
        m.goal = VectorXd::Zero(joints);
        m.phase_shift = VectorXd::Zero(joints);
        return m;
    }

    void set_discrete_kernels() {
        centers.resize(kernels);
        widths.resize(kernels);
        for (int j = 0; j < kernels; ++j) centers[j] = std::exp(-alpha_x * j / (kernels - 1));
        for (int j = 0; j + 1 < kernels; ++j) {
            const double d = centers[j + 1] - centers[j];
            widths[j] = 1.0 / (d * d);
        }
        widths[kernels - 1] = widths[kernels - 2];
    }

    void validate() const {
        if (kernels < 2) throw std::invalid_argument("DmpModel: kernel count must be >= 2");
        if (centers.size() != kernels || W.cols() != kernels || W.rows() < 1)
            throw std::invalid_argument("DmpModel: weight/center shapes inconsistent with kernel count");
        if (offset.size() != W.rows() || goal.size() != W.rows() || phase_shift.size() != W.rows())
            throw std::invalid_argument("DmpModel: per-joint vectors must match joint count");
        if (!(alpha > 0.0) || !(beta > 0.0)) throw std::invalid_argument("DmpModel: alpha and beta must be positive");
        if (cls == MovementClass::rhythmic && !(width > 0.0)) throw std::invalid_argument("DmpModel: width must be positive");
        if (cls == MovementClass::discrete && (widths.size() != kernels || !(duration > 0.0)))
            throw std::invalid_argument("DmpModel: discrete kernels or duration invalid");
        if (!W.allFinite()) throw std::invalid_argument("DmpModel: non-finite weights");
    }

    /// Same weights driving several joints with fixed phase shifts (e.g. left/right knee half a cycle apart).
    DmpModel replicated(const std::vector<double>& shifts) const {
        if (joints() != 1) throw std::invalid_argument("DmpModel::replicated: source must have one joint");
        DmpModel m = *this;
        const auto n = static_cast<Eigen::Index>(shifts.size());
        m.W = W.replicate(n, 1);
        m.offset = VectorXd::Constant(n, offset[0]);
        m.goal = VectorXd::Constant(n, goal[0]);
        m.phase_shift = Eigen::Map<const VectorXd>(shifts.data(), n);
        return m;
    }
};

/// Normalised kernel activations; `phase` is an angle (rhythmic) or the canonical variable x (discrete).
inline VectorXd kernel_basis(const DmpModel& m, double phase) {
    VectorXd psi(m.kernels);
    if (m.cls == MovementClass::rhythmic) {
        for (int j = 0; j < m.kernels; ++j) psi[j] = std::exp(m.width * (std::cos(phase - m.centers[j]) - 1.0));
    } else {
        for (int j = 0; j < m.kernels; ++j) {
            const double d = phase - m.centers[j];
            psi[j] = std::exp(-m.widths[j] * d * d);
        }
    }
    const double sum = psi.sum();
    if (!(sum > 0.0)) {
        // Far outside every kernel; fall back to the nearest centre.
        Eigen::Index k = 0;
        if (m.cls == MovementClass::rhythmic)
            (m.centers.array() - phase).cos().maxCoeff(&k);
        else
            (m.centers.array() - phase).abs().minCoeff(&k);
        psi.setZero();
        psi[k] = 1.0;
        return psi;
    }
    return psi / sum;
}

/// Sampled output of a DMP rollout; rows are time samples, columns joints.
struct Trajectory {
    VectorXd t;
    MatrixXd q, qd, qdd;
};

/// Stepwise DMP integrator. Keeps q_d, its velocity and acceleration in closed
/// form from the ODE states, so no numerical differentiation is needed.
class DmpRollout {
public:
    explicit DmpRollout(DmpModel model) : m_(std::move(model)) {
        m_.validate();
        const int n = m_.joints();
        y_ = VectorXd::Zero(n);
        z_ = VectorXd::Zero(n);
        if (m_.cls == MovementClass::discrete) y_ = m_.offset;
    }

    const DmpModel& model() const { return m_; }

    /// Swap weights (e.g. at a heel strike) while keeping the integrator state continuous.
    void set_weights(const MatrixXd& W) {
        if (W.rows() != m_.W.rows() || W.cols() != m_.W.cols()) throw std::invalid_argument("set_weights: shape mismatch");
        m_.W = W;
    }

    double phase() const { return phase_; }
    double canonical() const { return x_; }
    double time() const { return t_; }

    /// Desired position, velocity and acceleration given the current frequency Omega.
    VectorXd position() const {
        return m_.cls == MovementClass::rhythmic ? VectorXd(y_ + m_.offset) : y_;
    }
    VectorXd velocity(double Omega) const {
        if (m_.cls == MovementClass::rhythmic) return Omega * z_;
        return z_ / m_.duration;
    }
    VectorXd acceleration(double Omega) const {
        if (m_.cls == MovementClass::rhythmic) return Omega * Omega * rhythmic_rhs(phase_, y_, z_);
        return discrete_rhs(t_ / m_.duration, x_, y_, z_) / (m_.duration * m_.duration);
    }

    /// Advance by dt seconds with RK4. Omega (rad/s) only matters for rhythmic models.
    void step(double Omega, double dt) {
        if (m_.cls == MovementClass::rhythmic) {
            if (!(Omega > 0.0)) throw std::invalid_argument("DmpRollout: Omega must be positive");
            const double dp = Omega * dt;  // phase increment
            const double p0 = phase_;
            auto f = [&](double p, const VectorXd& y, const VectorXd& z, VectorXd& dy, VectorXd& dz) {
                dy = z;
                dz = rhythmic_rhs(p, y, z);
            };
            rk4(p0, dp, f);
            phase_ = std::fmod(p0 + dp, kTwoPi);
        } else {
            const double ds = dt / m_.duration;
            const double x0 = x_;
            const double s0 = t_ / m_.duration;
            auto f = [&](double s_off, const VectorXd& y, const VectorXd& z, VectorXd& dy, VectorXd& dz) {
                const double x = x0 * std::exp(-m_.alpha_x * s_off);
                dy = z;
                dz = discrete_rhs(s0 + s_off, x, y, z);
            };
            rk4(0.0, ds, f);
            x_ = x0 * std::exp(-m_.alpha_x * ds);
        }
        t_ += dt;
        if (!y_.allFinite() || !z_.allFinite()) throw DivergenceError("DMP rollout diverged at t=" + std::to_string(t_));
    }

    /// Run whole rhythmic cycles in normalised time so the state sits on the limit cycle.
    void settle(int cycles, int steps_per_cycle = 1000) {
        if (m_.cls != MovementClass::rhythmic) return;
        const double saved_t = t_;
        const double saved_phase = phase_;
        for (int k = 0; k < cycles * steps_per_cycle; ++k) step(kTwoPi, 1.0 / steps_per_cycle);
        t_ = saved_t;
        phase_ = saved_phase;
    }

private:
    VectorXd rhythmic_rhs(double phase, const VectorXd& y, const VectorXd& z) const {
        VectorXd out(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double forcing = kernel_basis(m_, phase + m_.phase_shift[i]).dot(m_.W.row(i));
            out[i] = -(m_.alpha * (m_.beta * y[i] + z[i]) + forcing);
        }
        return out;
    }

    VectorXd discrete_rhs(double s, double x, const VectorXd& y, const VectorXd& z) const {
        const bool forcing_on = s < 1.0 - 1e-12;
        const VectorXd psi = kernel_basis(m_, x);
        VectorXd out(y.size());
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double forcing = forcing_on ? x * (m_.goal[i] - m_.offset[i]) * psi.dot(m_.W.row(i)) : 0.0;
            out[i] = m_.alpha * (m_.beta * (m_.goal[i] - y[i]) - z[i]) + forcing;
        }
        return out;
    }

    // Integrates (y, z) over an independent-variable increment h starting at s0.
    template <typename F>
    void rk4(double s0, double h, F&& f) {
        VectorXd k1y, k1z, k2y, k2z, k3y, k3z, k4y, k4z;
        f(s0, y_, z_, k1y, k1z);
        f(s0 + 0.5 * h, y_ + 0.5 * h * k1y, z_ + 0.5 * h * k1z, k2y, k2z);
        f(s0 + 0.5 * h, y_ + 0.5 * h * k2y, z_ + 0.5 * h * k2z, k3y, k3z);
        f(s0 + h, y_ + h * k3y, z_ + h * k3z, k4y, k4z);
        y_ += h / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        z_ += h / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z);
    }

    DmpModel m_;
    VectorXd y_, z_;  // rhythmic: (q_d - offset, omega); discrete: (y, z) in normalised time
    double phase_ = 0.0;
    double x_ = 1.0;
    double t_ = 0.0;
};

/// Integrate from the rest state (q_d = offset for rhythmic, start for discrete), sampling every step.
inline Trajectory integrate_output(const DmpModel& model, double Omega, double duration, double dt, int settle_cycles = 0) {
    if (!(dt > 0.0) || !(duration >= 0.0)) throw std::invalid_argument("integrate_output: dt must be positive");
    if (model.cls == MovementClass::rhythmic && !(Omega > 0.0))
        throw std::invalid_argument("integrate_output: Omega must be positive for rhythmic models");
    DmpRollout r(model);
    if (settle_cycles > 0) r.settle(settle_cycles);
    const auto steps = static_cast<Eigen::Index>(std::llround(duration / dt));
    Trajectory tr;
    const int n = model.joints();
    tr.t.resize(steps + 1);
    tr.q.resize(steps + 1, n);
    tr.qd.resize(steps + 1, n);
    tr.qdd.resize(steps + 1, n);
    for (Eigen::Index k = 0; k <= steps; ++k) {
        tr.t[k] = static_cast<double>(k) * dt;
        tr.q.row(k) = r.position().transpose();
        tr.qd.row(k) = r.velocity(Omega).transpose();
        tr.qdd.row(k) = r.acceleration(Omega).transpose();
        if (k < steps) r.step(Omega, dt);
    }
    return tr;
}

/// Uniformly sampled demonstration. Rows are samples, columns joints. `period`
/// is the cycle length for rhythmic data; discrete data spans the full motion.
struct Demonstration {
    MatrixXd samples;
    double dt = 1e-3;
    double period = 1.0;
};

struct EncodeOptions {
    double ridge = 1e-9;  // relative to the mean diagonal of the normal matrix
    std::optional<double> alpha;  // class default when unset
    std::optional<double> beta;
};

namespace detail {

inline VectorXd solve_ridge(const MatrixXd& A, const VectorXd& b, double ridge) {
    MatrixXd AtA = A.transpose() * A;
    const double scale = AtA.diagonal().mean();
    AtA.diagonal().array() += ridge * (scale > 0.0 ? scale : 1.0);
    return AtA.ldlt().solve(A.transpose() * b);
}

}  // namespace detail

/// Fit DMP weights to a demonstration by least squares on the inverted forcing term.
inline DmpModel encode(const Demonstration& demo, MovementClass cls, int kernels, const EncodeOptions& opt = {}) {
    const Eigen::Index n_samples = demo.samples.rows();
    const int joints = static_cast<int>(demo.samples.cols());
    if (joints < 1) throw std::invalid_argument("encode: demonstration has no joints");
    if (!(demo.dt > 0.0)) throw std::invalid_argument("encode: dt must be positive");
    if (!demo.samples.allFinite()) throw std::invalid_argument("encode: non-finite demonstration");

    if (cls == MovementClass::rhythmic) {
        const auto per_cycle = static_cast<Eigen::Index>(std::llround(demo.period / demo.dt));
        if (!(demo.period > 0.0) || per_cycle < 4 || n_samples < per_cycle + 2)
            throw std::invalid_argument("encode: demonstration shorter than one cycle (" + std::to_string(n_samples) +
                                        " samples, need " + std::to_string(per_cycle + 2) + ")");
        DmpModel m = DmpModel::rhythmic(joints, kernels);
        m.alpha = opt.alpha.value_or(m.alpha);
        m.beta = opt.beta.value_or(m.beta);
        // Use samples 1..per_cycle so central differences are available throughout.
        const double dphi = kTwoPi * demo.dt / demo.period;  // phase per sample
        MatrixXd Phi(per_cycle, kernels);
        for (Eigen::Index k = 0; k < per_cycle; ++k)
            Phi.row(k) = kernel_basis(m, static_cast<double>(k + 1) * dphi).transpose();
        for (int i = 0; i < joints; ++i) {
            const VectorXd col = demo.samples.col(i);
            m.offset[i] = col.segment(1, per_cycle).mean();
            VectorXd target(per_cycle);
            for (Eigen::Index k = 1; k <= per_cycle; ++k) {
                const double y = col[k] - m.offset[i];
                const double d1 = (col[k + 1] - col[k - 1]) / (2.0 * dphi);
                const double d2 = (col[k + 1] - 2.0 * col[k] + col[k - 1]) / (dphi * dphi);
                target[k - 1] = -(d2 + m.alpha * d1 + m.alpha * m.beta * y);
            }
            m.W.row(i) = detail::solve_ridge(Phi, target, opt.ridge).transpose();
        }
        return m;
    }

    if (n_samples < 4) throw std::invalid_argument("encode: demonstration shorter than the motion (need >= 4 samples)");
    const double duration = static_cast<double>(n_samples - 1) * demo.dt;
    DmpModel m = DmpModel::discrete(joints, kernels, duration);
    m.alpha = opt.alpha.value_or(m.alpha);
    m.beta = opt.beta.value_or(m.beta);
    const double ds = demo.dt / duration;
    for (int i = 0; i < joints; ++i) {
        const VectorXd col = demo.samples.col(i);
        m.offset[i] = col[0];
        m.goal[i] = col[n_samples - 1];
        const double amp = m.goal[i] - m.offset[i];
        if (std::abs(amp) < 1e-9) continue;  // no motion to shape
        MatrixXd A(n_samples, kernels);
        VectorXd target(n_samples);
        for (Eigen::Index k = 0; k < n_samples; ++k) {
            // One-sided differences at the ends, central elsewhere.
            const Eigen::Index a = std::max<Eigen::Index>(k - 1, 0), b = std::min<Eigen::Index>(k + 1, n_samples - 1);
            const double d1 = (col[b] - col[a]) / (static_cast<double>(b - a) * ds);
            double d2 = 0.0;
            if (k > 0 && k + 1 < n_samples) d2 = (col[k + 1] - 2.0 * col[k] + col[k - 1]) / (ds * ds);
            const double x = std::exp(-m.alpha_x * static_cast<double>(k) * ds);
            target[k] = d2 - m.alpha * (m.beta * (m.goal[i] - col[k]) - d1);
            A.row(k) = (x * amp) * kernel_basis(m, x).transpose();
        }
        m.W.row(i) = detail::solve_ridge(A, target, opt.ridge).transpose();
    }
    return m;
}

/// Flattened translation vector: rhythmic [W, offset]; discrete [W, start, goal] (row-major over joints).
inline VectorXd dmp_to_vector(const DmpModel& m) {
    const int n = m.joints(), J = m.kernels;
    const int extra = m.cls == MovementClass::rhythmic ? 1 : 2;
    VectorXd v(n * (J + extra));
    for (int i = 0; i < n; ++i) {
        v.segment(i * (J + extra), J) = m.W.row(i).transpose();
        v[i * (J + extra) + J] = m.offset[i];
        if (extra == 2) v[i * (J + extra) + J + 1] = m.goal[i];
    }
    return v;
}

inline void dmp_from_vector(DmpModel& m, const VectorXd& v) {
    const int n = m.joints(), J = m.kernels;
    const int extra = m.cls == MovementClass::rhythmic ? 1 : 2;
    if (v.size() != n * (J + extra)) throw std::invalid_argument("dmp_from_vector: length mismatch");
    for (int i = 0; i < n; ++i) {
        m.W.row(i) = v.segment(i * (J + extra), J).transpose();
        m.offset[i] = v[i * (J + extra) + J];
        if (extra == 2) m.goal[i] = v[i * (J + extra) + J + 1];
    }
}

// --- CSV interchange -------------------------------------------------------
// Line 1 metadata as key=value pairs, then offset/goal/phase_shift rows, then
// one weight row per joint.

inline void write_dmp(std::ostream& os, const DmpModel& m) {
    os << "dmp,class=" << to_string(m.cls) << ",joints=" << m.joints() << ",kernels=" << m.kernels
       << ",width=" << csv::num(m.width) << ",alpha=" << csv::num(m.alpha) << ",beta=" << csv::num(m.beta)
       << ",alpha_x=" << csv::num(m.alpha_x) << ",duration=" << csv::num(m.duration) << '\n';
    auto row = [&](const char* name, const VectorXd& v) {
        os << name;
        for (Eigen::Index i = 0; i < v.size(); ++i) os << ',' << csv::num(v[i]);
        os << '\n';
    };
    row("offset", m.offset);
    row("goal", m.goal);
    row("phase_shift", m.phase_shift);
    for (int i = 0; i < m.joints(); ++i) row("w", m.W.row(i).transpose());
}

inline DmpModel read_dmp(std::istream& is) {
    const auto rows = csv::read_rows(is);
    if (rows.empty() || rows[0].empty() || rows[0][0] != "dmp") throw std::runtime_error("dmp file: missing metadata row");
    std::string cls;
    int joints = 0, kernels = 0;
    double width = 0, alpha = 0, beta = 0, alpha_x = 0, duration = 0;
    for (std::size_t k = 1; k < rows[0].size(); ++k) {
        const auto& kv = rows[0][k];
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::runtime_error("dmp file: malformed metadata '" + kv + "'");
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "class") cls = val;
        else if (key == "joints") joints = std::stoi(val);
        else if (key == "kernels") kernels = std::stoi(val);
        else if (key == "width") width = csv::to_double(val);
        else if (key == "alpha") alpha = csv::to_double(val);
        else if (key == "beta") beta = csv::to_double(val);
        else if (key == "alpha_x") alpha_x = csv::to_double(val);
        else if (key == "duration") duration = csv::to_double(val);
        else throw std::runtime_error("dmp file: unknown metadata key '" + key + "'");
    }
    if (cls != "rhythmic" && cls != "discrete") throw std::runtime_error("dmp file: unknown class '" + cls + "'");
    DmpModel m = cls == "rhythmic" ? DmpModel::rhythmic(joints, kernels) : DmpModel::discrete(joints, kernels, duration);
    m.alpha = alpha;
    m.beta = beta;
    if (m.cls == MovementClass::rhythmic) {
        m.width = width;
        m.duration = duration;
    } else {
        m.alpha_x = alpha_x;
        m.set_discrete_kernels();
    }
    if (rows.size() != static_cast<std::size_t>(4 + joints)) throw std::runtime_error("dmp file: wrong number of rows");
    auto read_vec = [&](std::size_t r, const char* name, Eigen::Index len) {
        if (rows[r].at(0) != name || rows[r].size() != static_cast<std::size_t>(len + 1))
            throw std::runtime_error(std::string("dmp file: malformed row '") + name + "'");
        VectorXd v(len);
        for (Eigen::Index i = 0; i < len; ++i) v[i] = csv::to_double(rows[r][static_cast<std::size_t>(i + 1)]);
        return v;
    };
    m.offset = read_vec(1, "offset", joints);
    m.goal = read_vec(2, "goal", joints);
    m.phase_shift = read_vec(3, "phase_shift", joints);
    for (int i = 0; i < joints; ++i) m.W.row(i) = read_vec(static_cast<std::size_t>(4 + i), "w", kernels).transpose();
    m.validate();
    return m;
}

// --- Adaptive oscillators --------------------------------------------------

struct OscillatorConfig {
    int components = 3;
    double kc1 = 20.0;
    double kc2 = 5.0;
};

/// Per-joint adaptive Fourier oscillators with a DC term, plus the fused frequency.
class OscillatorBank {
public:
    OscillatorBank(int joints, double initial_omega, const OscillatorConfig& cfg = {}) : cfg_(cfg) {
        if (joints < 1 || cfg.components < 1) throw std::invalid_argument("OscillatorBank: need joints and components");
        if (!(initial_omega > 0.0)) throw std::invalid_argument("OscillatorBank: initial frequency must be positive");
        phi_ = MatrixXd::Zero(joints, cfg.components);
        amp_ = MatrixXd::Zero(joints, cfg.components + 1);  // column 0 is the DC term
        omega_ = VectorXd::Constant(joints, initial_omega);
        active_.assign(static_cast<std::size_t>(joints), true);
    }

    int joints() const { return static_cast<int>(omega_.size()); }
    const VectorXd& omega() const { return omega_; }
    const MatrixXd& phases() const { return phi_; }
    const MatrixXd& amplitudes() const { return amp_; }
    MatrixXd& phases() { return phi_; }
    MatrixXd& amplitudes() { return amp_; }
    VectorXd& omega() { return omega_; }
    void set_active(int joint, bool on) { active_.at(static_cast<std::size_t>(joint)) = on; }

    /// Fused frequency: mean of the per-joint estimates over active joints.
    double fused_omega() const {
        double sum = 0.0;
        int count = 0;
        for (int i = 0; i < joints(); ++i)
            if (active_[static_cast<std::size_t>(i)]) {
                sum += omega_[i];
                ++count;
            }
        if (count == 0) throw std::logic_error("OscillatorBank: no active joints");
        return sum / count;
    }

    double reconstruction(int i) const { return reconstruct(i, phi_.row(i), amp_.row(i)); }

    /// One RK4 step with the measurement held over the step.
    void step(const VectorXd& q, double dt) {
        if (q.size() != joints()) throw std::invalid_argument("OscillatorBank::step: dimension mismatch");
        if (!(dt > 0.0)) throw std::invalid_argument("OscillatorBank::step: dt must be positive");
        const int nc = cfg_.components;
        for (int i = 0; i < joints(); ++i) {
            // State layout: [phi_1..phi_nc, A_0..A_nc, Omega]
            VectorXd s(2 * nc + 2);
            s << phi_.row(i).transpose(), amp_.row(i).transpose(), omega_[i];
            auto f = [&](const VectorXd& x) {
                const VectorXd ph = x.head(nc), a = x.segment(nc, nc + 1);
                const double w = x[2 * nc + 1];
                const double e = q[i] - reconstruct(i, ph.transpose(), a.transpose());
                VectorXd d(x.size());
                for (int j = 0; j < nc; ++j) d[j] = (j + 1) * w - cfg_.kc1 * e * std::sin(ph[j]);
                d[nc] = cfg_.kc2 * e;
                for (int j = 0; j < nc; ++j) d[nc + 1 + j] = cfg_.kc2 * e * std::cos(ph[j]);
                d[2 * nc + 1] = -cfg_.kc1 * e * std::sin(ph[0]);
                return d;
            };
            const VectorXd k1 = f(s), k2 = f(s + 0.5 * dt * k1), k3 = f(s + 0.5 * dt * k2), k4 = f(s + dt * k3);
            s += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!s.allFinite()) throw DivergenceError("OscillatorBank: non-finite state");
            for (int j = 0; j < nc; ++j) phi_(i, j) = std::fmod(s[j], kTwoPi);
            amp_.row(i) = s.segment(nc, nc + 1).transpose();
            omega_[i] = s[2 * nc + 1];
        }
    }

private:
    template <typename P, typename A>
    double reconstruct(int, const P& ph, const A& a) const {
        double r = a[0];
        for (int j = 0; j < cfg_.components; ++j) r += a[j + 1] * std::cos(ph[j]);
        return r;
    }

    OscillatorConfig cfg_;
    MatrixXd phi_, amp_;
    VectorXd omega_;
    std::vector<bool> active_;
};

/// Fused frequency of a bank driven by `signal(t)`, averaged over the last quarter of
/// `seconds`. One bank per initial guess; the run with the smallest reconstruction
/// residual wins, which rejects locks onto a subharmonic.
inline double lock_frequency(const std::function<VectorXd(double)>& signal, int joints, double seconds, double dt,
                             const std::vector<double>& initial_hz = {0.6, 0.8, 1.0, 1.2, 1.4},
                             const OscillatorConfig& cfg = {}) {
    if (initial_hz.empty() || !(seconds > 0.0) || !(dt > 0.0)) throw std::invalid_argument("lock_frequency: bad arguments");
    double best = 0.0, best_residual = std::numeric_limits<double>::infinity();
    const auto steps = static_cast<long>(std::llround(seconds / dt));
    for (double f0 : initial_hz) {
        OscillatorBank bank(joints, kTwoPi * f0, cfg);
        double omega = 0.0, residual = 0.0;
        long count = 0;
        for (long k = 0; k < steps; ++k) {
            const VectorXd q = signal(static_cast<double>(k) * dt);
            bank.step(q, dt);
            if (k >= 3 * steps / 4) {
                omega += bank.fused_omega();
                for (int i = 0; i < joints; ++i) residual += std::pow(q[i] - bank.reconstruction(i), 2);
                ++count;
            }
        }
        if (residual < best_residual) {
            best_residual = residual;
            best = omega / static_cast<double>(count);
        }
    }
    return best;
}

}  // namespace exo
