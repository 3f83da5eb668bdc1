#pragma once

// Glue between the wearer model and the learning modules: demonstrations,
// encoded task models, conflict schedules and dataset episodes.

#include "exo/anomaly.hpp"
#include "exo/dmp.hpp"
#include "exo/session.hpp"
#include "exo/wearer.hpp"

#include <vector>

namespace exo {

inline constexpr int kRhythmicKernels = 20;
inline constexpr int kDiscreteKernels = 15;

struct KernelCounts {
    int rhythmic = kRhythmicKernels;
    int discrete = kDiscreteKernels;

    int of(Task t) const { return is_rhythmic(t) ? rhythmic : discrete; }
    void validate() const {
        if (rhythmic < 2 || discrete < 2) throw std::invalid_argument("dmp: need at least 2 kernels per movement class");
    }
};

/// One cycle (plus margin) of a gait sampled at 1 kHz over a unit period.
inline Demonstration gait_demonstration(const HarmonicGait& g) {
    Demonstration d;
    d.dt = 1e-3;
    d.period = 1.0;
    d.samples.resize(1100, 1);
    for (Eigen::Index k = 0; k < d.samples.rows(); ++k) d.samples(k, 0) = g.value(kTwoPi * static_cast<double>(k) * d.dt);
    return d;
}

inline Demonstration motion_demonstration(const DiscreteMotion& m) {
    Demonstration d;
    d.dt = 1e-3;
    const auto n = static_cast<Eigen::Index>(std::llround(m.duration / d.dt)) + 1;
    d.samples.resize(n, 1);
    for (Eigen::Index k = 0; k < n; ++k) d.samples(k, 0) = m.value(static_cast<double>(k) * d.dt);
    return d;
}

/// Two-knee model of a rhythmic gait (right knee half a cycle behind).
inline DmpModel encode_gait(const HarmonicGait& g, int kernels = kRhythmicKernels) {
    return encode(gait_demonstration(g), MovementClass::rhythmic, kernels)
        .replicated({kKneePhaseShift[0], kKneePhaseShift[1]});
}

inline DmpModel encode_motion(const DiscreteMotion& m, int kernels = kDiscreteKernels) {
    return encode(motion_demonstration(m), MovementClass::discrete, kernels).replicated({0.0, 0.0});
}

/// Subject's own model for a task.
inline DmpModel subject_model(const SubjectProfile& p, Task task, const KernelCounts& k = {}) {
    return is_rhythmic(task) ? encode_gait(p.gait(task), k.rhythmic) : encode_motion(p.motion(task), k.discrete);
}

/// Population-average model of a task, the starting point before personalization.
inline DmpModel normative_model(Task task, const KernelCounts& k = {}) {
    const std::vector<double> v = detail::nominal_params(task);
    if (is_rhythmic(task)) return encode_gait(HarmonicGait::from_params(v.data()), k.rhythmic);
    DiscreteMotion m{v[0], v[1], v[2], detail::motion_duration(task)};
    return encode_motion(m, k.discrete);
}

/// `count` non-overlapping events of one kind spread over an episode, first one after `lead`.
inline std::vector<ConflictEvent> conflict_schedule(double episode_length, ConflictKind kind, double severity, int count,
                                                    double duration, Rng& rng, double lead = 3.0) {
    std::vector<ConflictEvent> out;
    if (count <= 0) return out;
    const double slot = (episode_length - lead) / count;
    if (!(slot > duration)) throw std::invalid_argument("conflict_schedule: episode too short for the requested events");
    for (int k = 0; k < count; ++k) {
        ConflictEvent e{kind, lead + k * slot + rng.uniform(0.0, slot - duration), duration, severity};
        e.validate(episode_length);
        out.push_back(e);
    }
    return out;
}

/// Setup with workspace bounds computed for its plant.
inline SessionSetup default_setup() {
    SessionSetup s;
    s.bounds = compute_bounds(s.plant, WorkspaceRanges::knee_default(s.plant.n));
    return s;
}

/// Rhythmic-task episode of one subject tracking `model` at the subject's cadence.
inline EpisodeLog walk_episode(const SessionSetup& setup, const SubjectProfile& subject, Task task, const DmpModel& model,
                               int gaits, std::uint64_t seed, const std::vector<ConflictEvent>& conflicts = {},
                               const ScoreFn& score = {}) {
    WalkSession ws(setup, subject, task);
    ws.set_conflicts(conflicts);
    if (score) ws.set_score(score);
    return ws.run(model, kTwoPi * subject.task_cadence(task), gaits, seed);
}

}  // namespace exo
