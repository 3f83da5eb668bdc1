#pragma once

// Simulated wearers: harmonic knee gaits, per-task variants tied to the walk
// variant through a fixed polynomial map, impedance-type interaction torque and
// conflict injection.

#include "exo/common.hpp"
#include "exo/csv.hpp"

#include <algorithm>
#include <array>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace exo {

enum class Task { walk = 0, stairs_up = 1, stairs_down = 2, squat = 3, stand = 4 };
inline constexpr int kTaskCount = 5;
inline constexpr std::array<Task, kTaskCount> kAllTasks = {Task::walk, Task::stairs_up, Task::stairs_down, Task::squat,
                                                           Task::stand};

inline const char* task_name(Task t) {
    switch (t) {
        case Task::walk: return "walk";
        case Task::stairs_up: return "stairs_up";
        case Task::stairs_down: return "stairs_down";
        case Task::squat: return "squat";
        case Task::stand: return "stand";
    }
    return "?";
}

inline Task parse_task(const std::string& name) {
    for (Task t : kAllTasks)
        if (name == task_name(t)) return t;
    throw std::invalid_argument("unknown task '" + name + "'");
}

inline bool is_rhythmic(Task t) { return t == Task::walk || t == Task::stairs_up || t == Task::stairs_down; }

/// q(psi) = offset + sum_k amp_k cos(k psi + phase_k); radians.
struct HarmonicGait {
    double offset = 0.0;
    std::array<double, 3> amp{};
    std::array<double, 3> phase{};

    double value(double psi) const {
        double q = offset;
        for (int k = 0; k < 3; ++k) q += amp[k] * std::cos((k + 1) * psi + phase[k]);
        return q;
    }
    /// dq/dpsi
    double slope(double psi) const {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d -= (k + 1) * amp[k] * std::sin((k + 1) * psi + phase[k]);
        return d;
    }
    double curvature(double psi) const {
        double d = 0.0;
        for (int k = 0; k < 3; ++k) d -= (k + 1) * (k + 1) * amp[k] * std::cos((k + 1) * psi + phase[k]);
        return d;
    }

    std::array<double, 7> params() const {
        return {offset, amp[0], amp[1], amp[2], phase[0], phase[1], phase[2]};
    }
    static HarmonicGait from_params(const double* p) {
        HarmonicGait g;
        g.offset = p[0];
        for (int k = 0; k < 3; ++k) {
            g.amp[k] = p[1 + k];
            g.phase[k] = p[4 + k];
        }
        return g;
    }
};

/// Point-to-point motion: minimum-jerk blend plus a symmetric bump 16 s^2 (1 - s)^2.
struct DiscreteMotion {
    double start = 0.0, goal = 0.0, bump = 0.0;
    double duration = 2.0;

    double value(double t) const {
        const double s = std::clamp(t / duration, 0.0, 1.0);
        const double mj = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
        return start + (goal - start) * mj + bump * 16.0 * s * s * (1.0 - s) * (1.0 - s);
    }
    double velocity(double t) const {
        if (t <= 0.0 || t >= duration) return 0.0;
        const double s = t / duration;
        const double dmj = 30.0 * s * s * (1.0 - s) * (1.0 - s);
        const double dbump = 32.0 * s * (1.0 - s) * (1.0 - 2.0 * s);
        return ((goal - start) * dmj + bump * dbump) / duration;
    }
};

struct SubjectProfile {
    int id = 0;
    double cadence = 1.0;  // Hz
    double K_h = 20.0;     // N m / rad
    double C_h = 2.0;      // N m s / rad
    HarmonicGait walk, stairs_up, stairs_down;
    DiscreteMotion squat, stand;

    const HarmonicGait& gait(Task t) const {
        switch (t) {
            case Task::walk: return walk;
            case Task::stairs_up: return stairs_up;
            case Task::stairs_down: return stairs_down;
            default: throw std::invalid_argument(std::string("task ") + task_name(t) + " is not rhythmic");
        }
    }
    const DiscreteMotion& motion(Task t) const {
        if (t == Task::squat) return squat;
        if (t == Task::stand) return stand;
        throw std::invalid_argument(std::string("task ") + task_name(t) + " is not discrete");
    }

    /// Cycle frequency for a rhythmic task (Hz).
    double task_cadence(Task t) const {
        if (t == Task::stairs_up) return 0.8 * cadence;
        if (t == Task::stairs_down) return 0.9 * cadence;
        return cadence;
    }
};

/// Knee joints: right leg lags the left by half a cycle.
inline constexpr int kKnees = 2;
inline constexpr std::array<double, kKnees> kKneePhaseShift = {0.0, kPi};

struct JointTarget {
    JointVec q, qd;
};

/// Intended knee angles for a rhythmic task at gait phase psi (rad), with psi' = psi_rate.
inline JointTarget gait_at_phase(const SubjectProfile& p, Task task, double psi, double psi_rate) {
    const HarmonicGait& g = p.gait(task);
    JointTarget out{JointVec(kKnees), JointVec(kKnees)};
    for (int i = 0; i < kKnees; ++i) {
        out.q[i] = g.value(psi + kKneePhaseShift[static_cast<std::size_t>(i)]);
        out.qd[i] = g.slope(psi + kKneePhaseShift[static_cast<std::size_t>(i)]) * psi_rate;
    }
    return out;
}

inline JointTarget intended_state(const SubjectProfile& p, Task task, double t) {
    if (!(t >= 0.0)) throw std::invalid_argument("intended_trajectory: t must be >= 0");
    if (is_rhythmic(task)) {
        const double rate = kTwoPi * p.task_cadence(task);
        return gait_at_phase(p, task, rate * t, rate);
    }
    const DiscreteMotion& m = p.motion(task);
    return {JointVec::Constant(kKnees, m.value(t)), JointVec::Constant(kKnees, m.velocity(t))};
}

inline JointVec intended_trajectory(const SubjectProfile& p, Task task, double t) { return intended_state(p, task, t).q; }

// --- Population -------------------------------------------------------------

struct PopulationConfig {
    int latent_dim = 2;
    double task_noise = 0.05;        // per-subject perturbation of task parameters, fraction of spread
    double walk_noise = 0.1;         // independent walk-parameter noise, fraction of spread
    double map_linear = 0.6;         // gain of the linear part of the task map
    double map_quadratic = 0.8;      // gain of the quadratic part
    std::uint64_t map_seed = 2024;   // fixes the task-map coefficients
    double cadence_mean = 1.0;       // Hz
    double cadence_sd = 0.08;
    double K_h = 20.0;
    double C_h = 2.0;
    double impedance_spread = 0.1;

    void validate() const {
        if (latent_dim < 1 || latent_dim > 7) throw std::invalid_argument("population: latent_dim must be in [1, 7]");
        if (task_noise < 0.0 || walk_noise < 0.0) throw std::invalid_argument("population: noise levels must be >= 0");
        if (!(cadence_mean > 0.5 && cadence_mean < 1.5) || cadence_sd < 0.0)
            throw std::invalid_argument("population: cadence mean must lie in (0.5, 1.5) Hz");
        if (!(K_h >= 0.0) || !(C_h >= 0.0) || impedance_spread < 0.0 || impedance_spread >= 1.0)
            throw std::invalid_argument("population: invalid human impedance");
    }
};

namespace detail {

inline std::array<double, 7> deg7(double o, double a1, double a2, double a3, double p1, double p2, double p3) {
    return {deg2rad(o), deg2rad(a1), deg2rad(a2), deg2rad(a3), p1, p2, p3};
}

// Nominal parameters and their spreads per task (rhythmic: 7, discrete: 3).
inline std::vector<double> nominal_params(Task t) {
    auto to_vec = [](const std::array<double, 7>& a) { return std::vector<double>(a.begin(), a.end()); };
    switch (t) {
        case Task::walk: return to_vec(deg7(25, 22, 10, 3, 1.76, 3.52, 0.5));
        case Task::stairs_up: return to_vec(deg7(42, 32, 12, 4, 1.9, 3.2, 0.9));
        case Task::stairs_down: return to_vec(deg7(36, 28, 11, 5, 1.6, 3.8, 0.2));
        case Task::squat: return {deg2rad(5), deg2rad(88), deg2rad(10)};
        case Task::stand: return {deg2rad(88), deg2rad(5), deg2rad(-8)};
    }
    return {};
}

inline std::vector<double> param_spread(Task t) {
    if (is_rhythmic(t)) {
        const auto a = deg7(3, 3, 2, 1, 0.15, 0.2, 0.3);
        return {a.begin(), a.end()};
    }
    return {deg2rad(2), deg2rad(8), deg2rad(4)};
}

inline double motion_duration(Task t) { return t == Task::squat ? 2.0 : 1.6; }

}  // namespace detail

/// Fixed polynomial map from normalised walk deviations d (7 values) to normalised task deviations.
class TaskMap {
public:
    explicit TaskMap(const PopulationConfig& cfg) {
        Rng rng(cfg.map_seed);
        for (Task t : kAllTasks) {
            if (t == Task::walk) continue;
            const int out = is_rhythmic(t) ? 7 : 3;
            Coeffs c;
            c.linear = MatrixXd(out, 7);
            for (int r = 0; r < out; ++r)
                for (int k = 0; k < 7; ++k) c.linear(r, k) = cfg.map_linear * rng.normal() / std::sqrt(7.0);
            c.quad.resize(static_cast<std::size_t>(out));
            for (auto& q : c.quad) {
                q = MatrixXd::Zero(7, 7);
                for (int a = 0; a < 7; ++a)
                    for (int b = a; b < 7; ++b) q(a, b) = cfg.map_quadratic * rng.normal() / 4.0;
            }
            coeffs_[static_cast<std::size_t>(t)] = std::move(c);
        }
    }

    /// Noise-free task parameters (radians) for a given walk gait.
    std::vector<double> apply(Task t, const HarmonicGait& walk) const {
        const auto nom = detail::nominal_params(Task::walk), spread = detail::param_spread(Task::walk);
        const auto wp = walk.params();
        VectorXd d(7);
        for (int k = 0; k < 7; ++k) d[k] = (wp[static_cast<std::size_t>(k)] - nom[static_cast<std::size_t>(k)]) / spread[static_cast<std::size_t>(k)];
        if (t == Task::walk) return {wp.begin(), wp.end()};
        const Coeffs& c = coeffs_[static_cast<std::size_t>(t)];
        const auto tn = detail::nominal_params(t), ts = detail::param_spread(t);
        VectorXd dev = c.linear * d;
        for (Eigen::Index r = 0; r < dev.size(); ++r) dev[r] += d.dot(c.quad[static_cast<std::size_t>(r)] * d);
        std::vector<double> out(tn.size());
        for (std::size_t k = 0; k < tn.size(); ++k) out[k] = tn[k] + ts[k] * dev[static_cast<Eigen::Index>(k)];
        return out;
    }

private:
    struct Coeffs {
        MatrixXd linear;
        std::vector<MatrixXd> quad;
    };
    std::array<Coeffs, kTaskCount> coeffs_;
};

namespace detail {

inline void assign_task(SubjectProfile& p, Task t, const std::vector<double>& v) {
    switch (t) {
        case Task::walk: p.walk = HarmonicGait::from_params(v.data()); break;
        case Task::stairs_up: p.stairs_up = HarmonicGait::from_params(v.data()); break;
        case Task::stairs_down: p.stairs_down = HarmonicGait::from_params(v.data()); break;
        case Task::squat: p.squat = {v[0], v[1], v[2], motion_duration(t)}; break;
        case Task::stand: p.stand = {v[0], v[1], v[2], motion_duration(t)}; break;
    }
}

}  // namespace detail

inline std::vector<SubjectProfile> sample_population(int count, std::uint64_t seed, const PopulationConfig& cfg = {}) {
    if (count < 1) throw std::invalid_argument("sample_population: count must be >= 1");
    cfg.validate();
    const TaskMap map(cfg);
    // Loading of the latent factors onto the 7 walk parameters (fixed, from the map seed).
    Rng lrng(cfg.map_seed ^ 0x5bd1e995ULL);
    MatrixXd loading(7, cfg.latent_dim);
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < cfg.latent_dim; ++c) loading(r, c) = lrng.normal() / std::sqrt(cfg.latent_dim);

    const auto nom = detail::nominal_params(Task::walk), spread = detail::param_spread(Task::walk);
    Rng rng(seed);
    std::vector<SubjectProfile> out;
    for (int s = 0; s < count; ++s) {
        Rng r = rng.split();
        SubjectProfile p;
        p.id = s;
        VectorXd z(cfg.latent_dim);
        for (int c = 0; c < cfg.latent_dim; ++c) z[c] = r.normal();
        const VectorXd dev = loading * z;
        std::vector<double> wp(7);
        for (int k = 0; k < 7; ++k)
            wp[static_cast<std::size_t>(k)] =
                nom[static_cast<std::size_t>(k)] + spread[static_cast<std::size_t>(k)] * (dev[k] + cfg.walk_noise * r.normal());
        detail::assign_task(p, Task::walk, wp);
        p.cadence = std::clamp(cfg.cadence_mean + cfg.cadence_sd * (0.6 * z[0] + 0.8 * r.normal()), 0.55, 1.45);
        p.K_h = cfg.K_h * (1.0 + cfg.impedance_spread * std::clamp(r.normal(), -2.0, 2.0));
        p.C_h = cfg.C_h * (1.0 + cfg.impedance_spread * std::clamp(r.normal(), -2.0, 2.0));
        for (Task t : kAllTasks) {
            if (t == Task::walk) continue;
            auto v = map.apply(t, p.walk);
            const auto ts = detail::param_spread(t);
            for (std::size_t k = 0; k < v.size(); ++k) v[k] += cfg.task_noise * ts[k] * r.normal();
            detail::assign_task(p, t, v);
        }
        out.push_back(p);
    }
    return out;
}

// --- Population CSV -----------------------------------------------------------
// Columns: id, cadence_hz, K_h, C_h, then per rhythmic task <task>_offset_deg,
// <task>_amp{1,2,3}_deg, <task>_phase{1,2,3}_rad, then per discrete task
// <task>_start_deg, <task>_goal_deg, <task>_bump_deg, <task>_duration_s.

inline std::vector<std::string> population_columns() {
    std::vector<std::string> cols = {"id", "cadence_hz", "K_h", "C_h"};
    for (Task t : kAllTasks) {
        const std::string n = task_name(t);
        if (is_rhythmic(t)) {
            cols.push_back(n + "_offset_deg");
            for (int k = 1; k <= 3; ++k) cols.push_back(n + "_amp" + std::to_string(k) + "_deg");
            for (int k = 1; k <= 3; ++k) cols.push_back(n + "_phase" + std::to_string(k) + "_rad");
        } else {
            for (const char* f : {"_start_deg", "_goal_deg", "_bump_deg", "_duration_s"}) cols.push_back(n + f);
        }
    }
    return cols;
}

inline void write_population(std::ostream& os, const std::vector<SubjectProfile>& pop) {
    os << csv::join(population_columns()) << '\n';
    for (const auto& p : pop) {
        std::vector<double> row = {static_cast<double>(p.id), p.cadence, p.K_h, p.C_h};
        for (Task t : kAllTasks) {
            if (is_rhythmic(t)) {
                const auto& g = p.gait(t);
                row.push_back(rad2deg(g.offset));
                for (double a : g.amp) row.push_back(rad2deg(a));
                for (double ph : g.phase) row.push_back(ph);
            } else {
                const auto& m = p.motion(t);
                row.insert(row.end(), {rad2deg(m.start), rad2deg(m.goal), rad2deg(m.bump), m.duration});
            }
        }
        os << csv::join(row) << '\n';
    }
}

inline std::vector<SubjectProfile> read_population(std::istream& is) {
    const auto rows = csv::read_rows(is);
    const auto cols = population_columns();
    if (rows.empty() || rows[0] != cols) throw std::runtime_error("population file: unexpected header");
    std::vector<SubjectProfile> pop;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        if (rows[r].size() != cols.size()) throw std::runtime_error("population file: wrong column count on row " + std::to_string(r));
        std::vector<double> v;
        for (const auto& s : rows[r]) v.push_back(csv::to_double(s));
        SubjectProfile p;
        p.id = static_cast<int>(v[0]);
        p.cadence = v[1];
        p.K_h = v[2];
        p.C_h = v[3];
        std::size_t k = 4;
        for (Task t : kAllTasks) {
            if (is_rhythmic(t)) {
                std::vector<double> g = {deg2rad(v[k]), deg2rad(v[k + 1]), deg2rad(v[k + 2]), deg2rad(v[k + 3]), v[k + 4], v[k + 5], v[k + 6]};
                detail::assign_task(p, t, g);
                k += 7;
            } else {
                DiscreteMotion m{deg2rad(v[k]), deg2rad(v[k + 1]), deg2rad(v[k + 2]), v[k + 3]};
                if (t == Task::squat) p.squat = m;
                else p.stand = m;
                k += 4;
            }
        }
        pop.push_back(p);
    }
    return pop;
}

// --- Interaction and conflicts --------------------------------------------------

enum class ConflictKind { asynchronization, imbalance };

inline const char* to_string(ConflictKind k) { return k == ConflictKind::asynchronization ? "asynchronization" : "imbalance"; }

struct ConflictEvent {
    ConflictKind kind = ConflictKind::asynchronization;
    double onset = 0.0;
    double duration = 1.0;
    double severity = 1.0;

    void validate(double episode_length) const {
        if (!(severity > 0.0 && severity <= 1.0)) throw std::invalid_argument("ConflictEvent: severity must lie in (0, 1]");
        if (!(onset >= 0.0) || !(duration > 0.0) || onset + duration > episode_length + 1e-9)
            throw std::invalid_argument("ConflictEvent: event must lie inside the episode");
    }

    /// Smooth 0..1 envelope with 0.2 s (or shorter) ramps at both ends.
    double envelope(double t) const {
        const double r = std::min(0.2, 0.25 * duration);
        return smooth_ramp(t, onset, onset + r) * (1.0 - smooth_ramp(t, onset + duration - r, onset + duration));
    }
    double envelope_rate(double t) const {
        const double r = std::min(0.2, 0.25 * duration);
        const double up = smooth_ramp(t, onset, onset + r), down = 1.0 - smooth_ramp(t, onset + duration - r, onset + duration);
        return smooth_ramp_derivative(t, onset, onset + r) * down - up * smooth_ramp_derivative(t, onset + duration - r, onset + duration);
    }
    bool active(double t) const { return t >= onset && t < onset + duration; }
};

/// Plain impedance law tau_e = K_h (q_h - q) + C_h (q_h' - q').
inline JointVec impedance_torque(double K_h, double C_h, const JointVec& q_h, const JointVec& qd_h, const JointVec& q,
                                 const JointVec& qd) {
    if (q_h.size() != q.size() || qd_h.size() != qd.size() || q.size() != qd.size())
        throw std::invalid_argument("interaction_torque: dimension mismatch");
    return K_h * (q_h - q) + C_h * (qd_h - qd);
}

inline constexpr double kImbalanceDriftAmp = 0.25;  // rad at severity 1
inline constexpr double kImbalanceDriftHz = 0.4;

/// Wearer's effective target for a rhythmic task at gait phase psi, including any conflict modifiers.
struct HumanDrive {
    JointVec q_h, qd_h;
    double K_h = 0.0, C_h = 0.0;
};

inline HumanDrive human_drive(const SubjectProfile& p, Task task, double psi, double psi_rate,
                              const std::optional<ConflictEvent>& conflict, double t) {
    HumanDrive d{JointVec(), JointVec(), p.K_h, p.C_h};
    double shift = 0.0, shift_rate = 0.0;
    if (conflict && conflict->kind == ConflictKind::asynchronization) {
        shift = conflict->severity * 0.5 * kPi * conflict->envelope(t);
        shift_rate = conflict->severity * 0.5 * kPi * conflict->envelope_rate(t);
    }
    if (is_rhythmic(task)) {
        const JointTarget jt = gait_at_phase(p, task, psi + shift, psi_rate + shift_rate);
        d.q_h = jt.q;
        d.qd_h = jt.qd;
    } else {
        const DiscreteMotion& m = p.motion(task);
        d.q_h = JointVec::Constant(kKnees, m.value(t));
        d.qd_h = JointVec::Constant(kKnees, m.velocity(t));
    }
    if (conflict && conflict->kind == ConflictKind::imbalance) {
        const double env = conflict->envelope(t), env_rate = conflict->envelope_rate(t);
        d.K_h *= 1.0 + conflict->severity * env;  // bracing
        const double w = kTwoPi * kImbalanceDriftHz, a = kImbalanceDriftAmp * conflict->severity;
        const double tt = t - conflict->onset;
        for (int i = 0; i < d.q_h.size(); ++i) {
            const double sgn = i == 0 ? 1.0 : -1.0;  // legs drift in opposite directions
            d.q_h[i] += sgn * a * env * std::sin(w * tt);
            d.qd_h[i] += sgn * a * (env_rate * std::sin(w * tt) + env * w * std::cos(w * tt));
        }
    }
    return d;
}

/// Interaction torque exerted by the wearer on the robot.
inline JointVec interaction_torque(const SubjectProfile& p, Task task, double psi, double psi_rate, const JointVec& q,
                                   const JointVec& qd, const std::optional<ConflictEvent>& conflict, double t) {
    const HumanDrive d = human_drive(p, task, psi, psi_rate, conflict, t);
    return impedance_torque(d.K_h, d.C_h, d.q_h, d.qd_h, q, qd);
}

/// Times at which an unwrapped phase trace crosses successive multiples of 2 pi.
inline std::vector<double> heel_strikes(const std::vector<double>& t, const std::vector<double>& phase) {
    if (t.empty() || phase.empty()) throw std::invalid_argument("heel_strikes: empty trace");
    if (t.size() != phase.size()) throw std::invalid_argument("heel_strikes: time and phase lengths differ");
    std::vector<double> events;
    double next = (std::floor(phase[0] / kTwoPi + 1e-12) + 1.0) * kTwoPi;
    for (std::size_t k = 1; k < phase.size(); ++k) {
        while (phase[k] >= next - 1e-9 && phase[k] > phase[k - 1]) {
            const double a = (next - phase[k - 1]) / (phase[k] - phase[k - 1]);
            events.push_back(t[k - 1] + std::clamp(a, 0.0, 1.0) * (t[k] - t[k - 1]));
            next += kTwoPi;
        }
    }
    return events;
}

}  // namespace exo
