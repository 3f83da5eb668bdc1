#pragma once

// Human-in-the-loop optimization of the walking DMP weights: each iteration
// walks a fresh 7-gait bout with the proposed weights, scores gait 7 and
// updates the GP. Bounds start at +-30% of the initial weights and halve
// around the incumbent when it has not changed for 10 proposals.

#include "exo/anomaly.hpp"
#include "exo/dmp.hpp"
#include "exo/gp.hpp"
#include "exo/scenario.hpp"
#include "exo/session.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <vector>

namespace exo {

struct CostConfig {
    double lambda = 0.5;  // tracking vs anomaly tradeoff
    int min_samples = 10;

    void validate() const {
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("cost: lambda must lie in [0, 1]");
        if (min_samples < 10) throw std::invalid_argument("cost: need T >= 10");
    }
};

struct CostTerms {
    double tracking = 0.0;  // (1/T) sum over samples and joints of (q_d - q)^2, rad^2
    double anomaly = 0.0;   // (1/T) sum of s
    double total = 0.0;
    int samples = 0;
};

/// Cost over log samples [begin, end).
inline CostTerms hil_cost(const CostConfig& cfg, const EpisodeLog& log, std::size_t begin, std::size_t end) {
    cfg.validate();
    if (log.s.size() != log.size()) throw std::invalid_argument("cost: episode log has no score column");
    if (end > log.size() || begin >= end) throw std::invalid_argument("cost: empty sample range");
    const auto T = static_cast<int>(end - begin);
    if (T < cfg.min_samples) throw std::invalid_argument("cost: gait has " + std::to_string(T) + " samples, need >= 10");
    CostTerms c;
    c.samples = T;
    for (std::size_t k = begin; k < end; ++k) {
        for (int i = 0; i < log.joints; ++i) {
            const double e = log.at(log.q_d, k, i) - log.at(log.q, k, i);
            c.tracking += e * e;
        }
        c.anomaly += log.s[k];
    }
    c.tracking /= T;
    c.anomaly /= T;
    c.total = cfg.lambda * c.tracking + (1.0 - cfg.lambda) * c.anomaly;
    return c;
}

inline CostTerms hil_cost(const CostConfig& cfg, const EpisodeLog& log) { return hil_cost(cfg, log, 0, log.size()); }

struct HilConfig {
    int iterations = 100;
    double bound_fraction = 0.3;   // initial half-width relative to |w0|
    double min_half_width = 0.05;  // absolute floor for near-zero weights
    int frozen = 10;               // leading weights held at their initial value
    int stall_limit = 10;          // proposals without incumbent change before halving
    double penalty_factor = 10.0;  // diverged episodes cost this times the worst cost seen
    GpConfig gp;
    BoxMinimizerConfig search;

    void validate() const {
        if (iterations < 1 || !(bound_fraction > 0.0) || !(min_half_width > 0.0) || frozen < 0 || stall_limit < 1 ||
            !(penalty_factor >= 1.0))
            throw std::invalid_argument("hil: invalid loop configuration");
        gp.validate();
    }
};

struct HilIteration {
    int iter = 0;
    VectorXd params;  // full optimized vector (frozen elements included)
    double cost = 0.0;
    double incumbent = 0.0;
    double bound_width = 0.0;  // mean width of the free dimensions
    bool diverged = false;
};

struct HilResult {
    std::vector<HilIteration> trace;
    VectorXd best;
    double best_cost = 0.0;
    int halvings = 0;
};

/// Cost of one parameter vector at a given iteration; may throw DivergenceError.
using HilEvaluator = std::function<double(const VectorXd& params, int iter)>;

/// Generic loop: iteration 1 evaluates x0, later ones the LCB proposal.
inline HilResult hil_optimize(const VectorXd& x0, const HilEvaluator& evaluate, const HilConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto dim = x0.size();
    const auto free_begin = std::min<Eigen::Index>(cfg.frozen, dim);
    const Eigen::Index nf = dim - free_begin;
    Rng rng(seed);

    // Free dimensions are searched in coordinates normalized to the initial box.
    VectorXd lo0(nf), hi0(nf);
    for (Eigen::Index i = 0; i < nf; ++i) {
        const double c = x0[free_begin + i];
        const double h = std::max(cfg.bound_fraction * std::abs(c), cfg.min_half_width);
        lo0[i] = c - h;
        hi0[i] = c + h;
    }
    auto to_full = [&](const VectorXd& u) {
        VectorXd x = x0;
        for (Eigen::Index i = 0; i < nf; ++i) x[free_begin + i] = lo0[i] + u[i] * (hi0[i] - lo0[i]);
        return x;
    };
    VectorXd lo = VectorXd::Zero(nf), hi = VectorXd::Ones(nf);
    VectorXd u = VectorXd::Constant(nf, 0.5);

    HilResult res;
    MatrixXd U(0, nf);
    VectorXd costs(0);
    double worst = 0.0;
    int best_index = -1, stall = 0;
    GaussianProcess gp(cfg.gp);
    for (int it = 1; it <= cfg.iterations; ++it) {
        if (it > 1 && nf > 0) {
            gp.fit(U, costs);
            u = propose_lcb(gp, lo, hi, U.row(best_index).transpose(), rng, cfg.search);
        }
        const VectorXd x = to_full(u);
        HilIteration rec;
        rec.iter = it;
        rec.params = x;
        try {
            rec.cost = evaluate(x, it);
            if (!std::isfinite(rec.cost)) throw DivergenceError("non-finite cost");
        } catch (const DivergenceError&) {
            rec.diverged = true;
            rec.cost = cfg.penalty_factor * std::max(worst, 1e-12);
        }
        if (!rec.diverged) worst = std::max(worst, rec.cost);
        U.conservativeResize(U.rows() + 1, nf);
        U.row(U.rows() - 1) = u.transpose();
        costs.conservativeResize(costs.size() + 1);
        costs[costs.size() - 1] = rec.cost;

        if (best_index < 0 || rec.cost < costs[best_index]) {
            best_index = static_cast<int>(costs.size()) - 1;
            stall = 0;
        } else if (it > 1 && ++stall >= cfg.stall_limit && nf > 0) {
            // Halve the box around the incumbent, staying inside the current box.
            const VectorXd inc = U.row(best_index).transpose();
            for (Eigen::Index i = 0; i < nf; ++i) {
                const double half = 0.25 * (hi[i] - lo[i]);
                double a = inc[i] - half, b = inc[i] + half;
                if (a < lo[i]) {
                    b += lo[i] - a;
                    a = lo[i];
                }
                if (b > hi[i]) {
                    a -= b - hi[i];
                    b = hi[i];
                }
                lo[i] = std::max(lo[i], a);
                hi[i] = std::min(hi[i], b);
            }
            ++res.halvings;
            stall = 0;
        }
        rec.incumbent = costs[best_index];
        double width = 0.0;
        for (Eigen::Index i = 0; i < nf; ++i) width += (hi[i] - lo[i]) * (hi0[i] - lo0[i]);
        rec.bound_width = nf > 0 ? width / static_cast<double>(nf) : 0.0;
        res.trace.push_back(rec);
    }
    res.best = to_full(U.row(best_index).transpose());
    res.best_cost = costs[best_index];
    return res;
}

/// Equal-budget baseline: x0 first, then uniform samples in the initial box.
inline HilResult random_search(const VectorXd& x0, const HilEvaluator& evaluate, const HilConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const auto dim = x0.size();
    const auto free_begin = std::min<Eigen::Index>(cfg.frozen, dim);
    Rng rng(seed);
    HilResult res;
    double worst = 0.0;
    for (int it = 1; it <= cfg.iterations; ++it) {
        VectorXd x = x0;
        if (it > 1)
            for (Eigen::Index i = free_begin; i < dim; ++i) {
                const double h = std::max(cfg.bound_fraction * std::abs(x0[i]), cfg.min_half_width);
                x[i] = rng.uniform(x0[i] - h, x0[i] + h);
            }
        HilIteration rec;
        rec.iter = it;
        rec.params = x;
        try {
            rec.cost = evaluate(x, it);
            if (!std::isfinite(rec.cost)) throw DivergenceError("non-finite cost");
        } catch (const DivergenceError&) {
            rec.diverged = true;
            rec.cost = cfg.penalty_factor * std::max(worst, 1e-12);
        }
        if (!rec.diverged) worst = std::max(worst, rec.cost);
        if (res.trace.empty() || rec.cost < res.best_cost) {
            res.best_cost = rec.cost;
            res.best = x;
        }
        rec.incumbent = res.best_cost;
        res.trace.push_back(rec);
    }
    return res;
}

/// Walking-weight evaluator for one simulated subject: params are the template
/// joint's kernel weights; each call walks `gaits` reference cycles at the fixed
/// frequency Omega and returns the cost of the last gait.
struct SubjectEvaluator {
    SessionSetup setup;
    SubjectProfile subject;
    DmpModel base;         // provides offset and phase shifts
    double Omega = kTwoPi;
    int gaits = 7;
    CostConfig cost;
    std::optional<VaeModel> detector;
    std::uint64_t seed = 1;

    DmpModel model_for(const VectorXd& params) const {
        DmpModel m = base;
        for (int i = 0; i < m.joints(); ++i) m.W.row(i) = params.transpose();
        return m;
    }

    EpisodeLog episode(const VectorXd& params, int iter) const {
        WalkSession ws(setup, subject, Task::walk);
        if (detector) ws.set_score(make_score_fn(*detector));
        return ws.run(model_for(params), Omega, gaits, seed * 1000003ULL + static_cast<std::uint64_t>(iter));
    }

    CostTerms terms(const EpisodeLog& log) const {
        const auto [b, e] = gait_range(log, gaits);
        return hil_cost(cost, log, b, e);
    }

    double operator()(const VectorXd& params, int iter) const { return terms(episode(params, iter)).total; }
};

/// Oscillator estimate of the wearer's walking frequency from noisy measurements of their own gait.
inline double calibrate_frequency(const SubjectProfile& subject, double seconds = 20.0, std::uint64_t seed = 1) {
    Rng rng(seed);
    const double f = subject.cadence;
    // Same noise sequence for every initial guess.
    std::vector<double> noise(static_cast<std::size_t>(2 * std::llround(seconds / 1e-3) + 2));
    for (double& v : noise) v = 1e-3 * rng.normal();
    auto signal = [&](double t) {
        const JointTarget h = gait_at_phase(subject, Task::walk, kTwoPi * f * t, kTwoPi * f);
        const auto k = static_cast<std::size_t>(std::llround(t / 1e-3));
        VectorXd q = h.q;
        for (Eigen::Index i = 0; i < q.size(); ++i) q[i] += noise[2 * k + static_cast<std::size_t>(i)];
        return q;
    };
    return lock_frequency(signal, kKnees, seconds, 1e-3);
}

inline void write_hil_trace(std::ostream& os, const HilResult& r) {
    if (r.trace.empty()) return;
    os << "iter";
    for (Eigen::Index i = 0; i < r.trace.front().params.size(); ++i) os << ",w" << i;
    os << ",cost,incumbent,bound_width\n";
    for (const auto& it : r.trace) {
        os << it.iter;
        for (Eigen::Index i = 0; i < it.params.size(); ++i) os << ',' << csv::num(it.params[i]);
        os << ',' << csv::num(it.cost) << ',' << csv::num(it.incumbent) << ',' << csv::num(it.bound_width) << '\n';
    }
}

}  // namespace exo
