#pragma once

// Closed-loop walking episode: wearer + SEA plant + observer + variable
// impedance controller + DMP reference, logged at a decimated rate.

#include "exo/controller.hpp"
#include "exo/csv.hpp"
#include "exo/dmp.hpp"
#include "exo/dynamics.hpp"
#include "exo/observer.hpp"
#include "exo/wearer.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace exo {

/// Time-indexed record of one bout. Per-joint series are stored row-major (sample, joint).
struct EpisodeLog {
    int joints = 0;
    double dt = 0.01;  // log sample period
    std::vector<double> t, s, w, robot_phase, human_phase;
    std::vector<int> saturated, heel_strike;
    std::vector<double> q, q_d, tau_e, tau_hat, z, u;

    std::size_t size() const { return t.size(); }

    double at(const std::vector<double>& series, std::size_t k, int i) const {
        return series[k * static_cast<std::size_t>(joints) + static_cast<std::size_t>(i)];
    }

    /// Indices of heel-strike samples.
    std::vector<std::size_t> strike_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t k = 0; k < heel_strike.size(); ++k)
            if (heel_strike[k]) out.push_back(k);
        return out;
    }

    void write_csv(std::ostream& os) const {
        os << "t";
        const char* names[] = {"q", "q_d", "tau_e_true", "tau_e_hat", "z", "u"};
        for (const char* n : names)
            for (int i = 0; i < joints; ++i) os << ',' << n << '[' << i << ']';
        os << ",s,w,saturated,heel_strike\n";
        const std::vector<double>* series[] = {&q, &q_d, &tau_e, &tau_hat, &z, &u};
        for (std::size_t k = 0; k < size(); ++k) {
            os << csv::num(t[k]);
            for (const auto* sr : series)
                for (int i = 0; i < joints; ++i) os << ',' << csv::num(at(*sr, k, i));
            os << ',' << csv::num(s[k]) << ',' << csv::num(w[k]) << ',' << saturated[k] << ',' << heel_strike[k] << '\n';
        }
    }

    /// Inverse of write_csv (phases are not stored and stay empty).
    static EpisodeLog from_table(const csv::Table& tab) {
        EpisodeLog log;
        while (tab.has_column("q[" + std::to_string(log.joints) + "]")) ++log.joints;
        if (log.joints == 0) throw std::runtime_error("episode file: no joint columns");
        const char* names[] = {"q", "q_d", "tau_e_true", "tau_e_hat", "z", "u"};
        std::vector<double>* series[] = {&log.q, &log.q_d, &log.tau_e, &log.tau_hat, &log.z, &log.u};
        std::vector<int> cols[6];
        for (int n = 0; n < 6; ++n)
            for (int i = 0; i < log.joints; ++i) cols[n].push_back(tab.column(std::string(names[n]) + '[' + std::to_string(i) + ']'));
        const int ct = tab.column("t"), cs = tab.column("s"), cw = tab.column("w"), csat = tab.column("saturated"),
                  chs = tab.column("heel_strike");
        for (const auto& row : tab.rows) {
            if (row.size() != tab.columns.size()) throw std::runtime_error("episode file: ragged row");
            log.t.push_back(csv::to_double(row[static_cast<std::size_t>(ct)]));
            for (int n = 0; n < 6; ++n)
                for (int c : cols[n]) series[n]->push_back(csv::to_double(row[static_cast<std::size_t>(c)]));
            log.s.push_back(csv::to_double(row[static_cast<std::size_t>(cs)]));
            log.w.push_back(csv::to_double(row[static_cast<std::size_t>(cw)]));
            log.saturated.push_back(static_cast<int>(csv::to_double(row[static_cast<std::size_t>(csat)])));
            log.heel_strike.push_back(static_cast<int>(csv::to_double(row[static_cast<std::size_t>(chs)])));
        }
        if (log.t.size() >= 2) log.dt = log.t[1] - log.t[0];
        return log;
    }
};

struct SessionConfig {
    double dt = 1e-3;
    int log_decimation = 10;        // plant steps per log sample (100 Hz)
    double entrainment = 4.0;       // rad/s pull of the wearer's phase toward the robot's
    double cadence_jitter = 0.02;   // relative stride-frequency variability (OU, sd)
    double jitter_tau = 2.0;        // s
    int score_window = 50;          // log samples per scored window
    int score_stride = 10;          // log samples between score updates
    double initial_tracking = 1.0;  // 1: robot starts on q_d; 0: on the wearer's posture

    void validate() const {
        if (!(dt > 0.0 && dt <= 0.01) || log_decimation < 1) throw std::invalid_argument("session: invalid dt or decimation");
        if (entrainment < 0.0 || cadence_jitter < 0.0 || !(jitter_tau > 0.0))
            throw std::invalid_argument("session: entrainment and jitter must be non-negative");
        if (score_window < 2 || score_stride < 1) throw std::invalid_argument("session: invalid score window");
    }
};

/// Scores the window of log samples ending at `end` (exclusive). Returns s >= 0.
using ScoreFn = std::function<double(const EpisodeLog&, std::size_t end)>;

struct SessionSetup {
    RobotParams plant = RobotParams::knees();
    ImpedanceConfig impedance = ImpedanceConfig::for_joints(2);
    ObserverBounds bounds;
    ObserverConfig observer;
    SessionConfig session;
};

/// Runs rhythmic-task episodes for one subject.
class WalkSession {
public:
    WalkSession(const SessionSetup& setup, SubjectProfile subject, Task task)
        : setup_(setup), subject_(std::move(subject)), task_(task) {
        setup_.plant.validate();
        setup_.impedance.validate();
        setup_.session.validate();
        if (!is_rhythmic(task)) throw std::invalid_argument("WalkSession: task must be rhythmic");
        if (setup_.plant.n != kKnees || setup_.impedance.joints() != kKnees)
            throw std::invalid_argument("WalkSession: plant and controller must have two knee joints");
    }

    void set_conflicts(std::vector<ConflictEvent> events) { conflicts_ = std::move(events); }
    void set_score(ScoreFn fn) { score_fn_ = std::move(fn); }

    /// Called at each heel strike with the 1-based index of the gait that just ended;
    /// may return new weights for the following gait.
    using StrikeFn = std::function<std::optional<MatrixXd>(int gait_done)>;
    void set_on_strike(StrikeFn fn) { on_strike_ = std::move(fn); }

    /// Simulate `gaits` reference cycles at constant frequency Omega (rad/s).
    EpisodeLog run(const DmpModel& model, double Omega, int gaits, std::uint64_t seed) const {
        if (!(Omega > 0.0) || gaits < 1) throw std::invalid_argument("WalkSession::run: need Omega > 0 and gaits >= 1");
        const auto& sc = setup_.session;
        const RobotParams& p = setup_.plant;
        Rng rng(seed);

        DmpRollout dmp(model);
        dmp.settle(2);
        ImpedanceController ctrl(setup_.impedance);
        ctrl.reset();
        DisturbanceObserver obs(p, setup_.bounds, setup_.observer);

        double psi = 0.0, jitter = 0.0;
        const double f_h = subject_.task_cadence(task_);
        auto human_rate = [&](double phi_r) {
            return kTwoPi * f_h * (1.0 + jitter) + sc.entrainment * std::sin(phi_r - psi);
        };

        RobotState s = RobotState::zero(p.n);
        {
            const JointTarget h = gait_at_phase(subject_, task_, psi, kTwoPi * f_h);
            const VectorXd qd0 = dmp.position(), vd0 = dmp.velocity(Omega);
            for (int i = 0; i < p.n; ++i) {
                s.q[i] = sc.initial_tracking * qd0[i] + (1.0 - sc.initial_tracking) * h.q[i];
                s.qd[i] = sc.initial_tracking * vd0[i] + (1.0 - sc.initial_tracking) * h.qd[i];
            }
            s.theta = preloaded_rotor(p, s.q);
            s.thetad = s.qd;
        }
        obs.reset(s);

        EpisodeLog log;
        log.joints = p.n;
        log.dt = sc.dt * sc.log_decimation;
        const double duration = gaits * kTwoPi / Omega;
        const auto steps = static_cast<long>(std::llround(duration / sc.dt));
        double score = 0.0;
        int gait = 0;
        bool strike_pending = false;
        const double jitter_decay = std::exp(-sc.dt / sc.jitter_tau);
        const double jitter_kick = sc.cadence_jitter * std::sqrt(1.0 - jitter_decay * jitter_decay);

        for (long k = 0; k <= steps; ++k) {
            const double phi_r = dmp.phase();
            const double rate = human_rate(phi_r);
            const DesiredState des{dmp.position(), dmp.velocity(Omega), dmp.acceleration(Omega)};
            const std::optional<ConflictEvent> ev = active_conflict(s.t);
            const JointVec tau_e = interaction_torque(subject_, task_, psi, rate, s.q, s.qd, ev, s.t);
            const ControlOutput out = ctrl.step(p, s, des, obs.estimate(), score, sc.dt);

            if (k % sc.log_decimation == 0) {
                log.t.push_back(s.t);
                append(log.q, s.q);
                append(log.q_d, des.q);
                append(log.tau_e, tau_e);
                append(log.tau_hat, obs.estimate());
                append(log.z, out.z);
                append(log.u, out.u);
                log.s.push_back(score);
                log.w.push_back(out.w);
                log.saturated.push_back(out.saturated ? 1 : 0);
                log.heel_strike.push_back(strike_pending ? 1 : 0);
                log.robot_phase.push_back(phi_r);
                log.human_phase.push_back(psi);
                strike_pending = false;
                const std::size_t n_log = log.size();
                if (score_fn_ && n_log >= static_cast<std::size_t>(sc.score_window) &&
                    (n_log - static_cast<std::size_t>(sc.score_window)) % static_cast<std::size_t>(sc.score_stride) == 0)
                    score = std::max(0.0, score_fn_(log, n_log));
            }
            if (k == steps) break;

            const RobotState next = step(p, s, out.u, tau_e, sc.dt);
            obs.step(s, next, sc.dt);
            s = next;
            psi += rate * sc.dt;
            jitter = jitter_decay * jitter + jitter_kick * rng.normal();
            const double before = dmp.phase();
            dmp.step(Omega, sc.dt);
            if (dmp.phase() < before) {  // wrapped: heel strike
                ++gait;
                strike_pending = true;
                if (on_strike_) {
                    if (auto W = on_strike_(gait)) dmp.set_weights(*W);
                }
            }
        }
        return log;
    }

private:
    static void append(std::vector<double>& v, const JointVec& x) {
        for (Eigen::Index i = 0; i < x.size(); ++i) v.push_back(x[i]);
    }

    std::optional<ConflictEvent> active_conflict(double t) const {
        for (const auto& e : conflicts_)
            if (t >= e.onset && t <= e.onset + e.duration) return e;
        return std::nullopt;
    }

    SessionSetup setup_;
    SubjectProfile subject_;
    Task task_;
    std::vector<ConflictEvent> conflicts_;
    ScoreFn score_fn_;
    StrikeFn on_strike_;
};

/// Log-sample range [begin, end) of gait number `gait` (1-based), bounded by heel strikes.
inline std::pair<std::size_t, std::size_t> gait_range(const EpisodeLog& log, int gait) {
    const auto strikes = log.strike_indices();
    std::size_t begin = 0;
    if (gait > 1) {
        if (strikes.size() < static_cast<std::size_t>(gait - 1)) throw std::out_of_range("gait_range: gait not in log");
        begin = strikes[static_cast<std::size_t>(gait - 2)];
    }
    std::size_t end = log.size();
    if (strikes.size() >= static_cast<std::size_t>(gait)) end = strikes[static_cast<std::size_t>(gait - 1)];
    else if (gait > static_cast<int>(strikes.size()) + 1) throw std::out_of_range("gait_range: gait not in log");
    return {begin, end};
}

}  // namespace exo
