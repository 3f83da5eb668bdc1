#pragma once

// Gaussian-process surrogate with an RBF kernel and the lower-confidence-bound
// acquisition, minimized by projected L-BFGS from random restarts.

#include "exo/common.hpp"

#include <Eigen/Cholesky>

#include <deque>
#include <functional>
#include <limits>
#include <vector>

namespace exo {

struct GpConfig {
    double length_scale = 0.2;   // in units of the normalized input
    double jitter = 1e-8;        // relative to the signal variance
    double max_jitter = 1e-4;
    double upsilon = 2.0;        // LCB coefficient
    bool center_costs = true;    // subtract the sample mean before fitting

    void validate() const {
        if (!(length_scale > 0.0) || !(jitter > 0.0) || !(max_jitter >= jitter) || !(upsilon >= 0.0))
            throw std::invalid_argument("gp: length scale, jitter > 0, max_jitter >= jitter, upsilon >= 0");
    }
};

/// Posterior at one point.
struct GpPrediction {
    double mean = 0.0;
    double variance = 0.0;
    double sd() const { return std::sqrt(variance); }
};

/// Exact GP over inputs in [0, 1]^d.
class GaussianProcess {
public:
    explicit GaussianProcess(GpConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

    const GpConfig& config() const { return cfg_; }

    double kernel(const VectorXd& a, const VectorXd& b) const {
        return signal_var_ * std::exp(-0.5 * (a - b).squaredNorm() / (cfg_.length_scale * cfg_.length_scale));
    }

    /// Fit to inputs (rows) and costs. Signal variance = sample variance of the costs.
    void fit(const MatrixXd& X, const VectorXd& y) {
        if (X.rows() < 1 || X.rows() != y.size()) throw std::invalid_argument("gp: need at least one sample and matching costs");
        X_ = X;
        const auto n = X.rows();
        mean_ = cfg_.center_costs ? y.mean() : 0.0;
        const VectorXd yc = y.array() - mean_;
        const double var = n > 1 ? (y.array() - y.mean()).square().sum() / static_cast<double>(n - 1) : 0.0;
        signal_var_ = var > 1e-12 ? var : 1.0;
        MatrixXd K(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j <= i; ++j) K(i, j) = K(j, i) = kernel(X.row(i).transpose(), X.row(j).transpose());
        for (double jit = cfg_.jitter;; jit *= 10.0) {
            MatrixXd Kj = K;
            Kj.diagonal().array() += jit * signal_var_;
            llt_.compute(Kj);
            if (llt_.info() == Eigen::Success) {
                jitter_used_ = jit;
                break;
            }
            if (jit * 10.0 > cfg_.max_jitter * (1.0 + 1e-9))
                throw std::runtime_error("gp: kernel matrix not positive definite at jitter " + std::to_string(jit));
        }
        alpha_ = llt_.solve(yc);
    }

    bool fitted() const { return X_.rows() > 0; }
    Eigen::Index samples() const { return X_.rows(); }
    double signal_variance() const { return signal_var_; }
    double prior_mean() const { return mean_; }
    double jitter_used() const { return jitter_used_; }

    GpPrediction predict(const VectorXd& x) const {
        if (!fitted()) throw std::logic_error("gp: predict before fit");
        VectorXd k(X_.rows());
        for (Eigen::Index i = 0; i < X_.rows(); ++i) k[i] = kernel(X_.row(i).transpose(), x);
        GpPrediction p;
        p.mean = mean_ + k.dot(alpha_);
        const VectorXd v = llt_.matrixL().solve(k);
        p.variance = std::max(0.0, signal_var_ - v.squaredNorm());
        return p;
    }

    double lcb(const VectorXd& x) const {
        const GpPrediction p = predict(x);
        return p.mean - cfg_.upsilon * p.sd();
    }

private:
    GpConfig cfg_;
    MatrixXd X_;
    VectorXd alpha_;
    Eigen::LLT<MatrixXd> llt_;
    double mean_ = 0.0, signal_var_ = 1.0, jitter_used_ = 0.0;
};

struct BoxMinimizerConfig {
    int restarts = 10;
    int max_iterations = 60;
    int memory = 5;
    double fd_step = 1e-6;
    double tolerance = 1e-9;
};

/// Projected L-BFGS with central-difference gradients on [lo, hi].
inline VectorXd minimize_in_box(const std::function<double(const VectorXd&)>& f, const VectorXd& x0, const VectorXd& lo,
                                const VectorXd& hi, const BoxMinimizerConfig& cfg) {
    const auto d = x0.size();
    auto project = [&](const VectorXd& x) { return VectorXd(x.cwiseMax(lo).cwiseMin(hi)); };
    auto gradient = [&](const VectorXd& x) {
        VectorXd g(d);
        for (Eigen::Index i = 0; i < d; ++i) {
            const double h = cfg.fd_step;
            VectorXd a = x, b = x;
            a[i] = std::min(hi[i], x[i] + h);
            b[i] = std::max(lo[i], x[i] - h);
            g[i] = a[i] > b[i] ? (f(a) - f(b)) / (a[i] - b[i]) : 0.0;
        }
        return g;
    };
    VectorXd x = project(x0);
    double fx = f(x);
    VectorXd g = gradient(x);
    std::deque<std::pair<VectorXd, VectorXd>> mem;
    for (int it = 0; it < cfg.max_iterations; ++it) {
        // Two-loop recursion for the search direction.
        VectorXd q = g;
        std::vector<double> a(mem.size());
        for (std::size_t k = mem.size(); k-- > 0;) {
            const auto& [s, y] = mem[k];
            a[k] = s.dot(q) / y.dot(s);
            q -= a[k] * y;
        }
        if (!mem.empty()) q *= mem.back().first.dot(mem.back().second) / mem.back().second.squaredNorm();
        for (std::size_t k = 0; k < mem.size(); ++k) {
            const auto& [s, y] = mem[k];
            q += (a[k] - y.dot(q) / y.dot(s)) * s;
        }
        VectorXd dir = -q;
        if (dir.dot(g) >= 0.0) dir = -g;
        // Without curvature memory, cap the trial step at a tenth of the box so a steep
        // start does not leap into another basin.
        if (mem.empty()) {
            const double span = 0.1 * (hi - lo).maxCoeff(), len = dir.cwiseAbs().maxCoeff();
            if (len > span && span > 0.0) dir *= span / len;
        }
        double step = 1.0;
        VectorXd xn;
        double fn = fx;
        bool moved = false;
        for (int ls = 0; ls < 30; ++ls, step *= 0.5) {
            xn = project(x + step * dir);
            fn = f(xn);
            if (fn <= fx + 1e-4 * g.dot(xn - x)) {
                moved = true;
                break;
            }
        }
        if (!moved || (x - xn).norm() < cfg.tolerance) break;
        const VectorXd gn = gradient(xn);
        const VectorXd s = xn - x, y = gn - g;
        if (s.dot(y) > 1e-12) {
            mem.emplace_back(s, y);
            if (static_cast<int>(mem.size()) > cfg.memory) mem.pop_front();
        }
        const double df = fx - fn;
        x = xn;
        fx = fn;
        g = gn;
        if (df < cfg.tolerance * (1.0 + std::abs(fx))) break;
    }
    return x;
}

/// LCB minimizer over [lo, hi] from `restarts` uniform starts plus `incumbent`.
inline VectorXd propose_lcb(const GaussianProcess& gp, const VectorXd& lo, const VectorXd& hi, const VectorXd& incumbent,
                            Rng& rng, const BoxMinimizerConfig& cfg = {}) {
    if (lo.size() != hi.size() || incumbent.size() != lo.size()) throw std::invalid_argument("propose: dimension mismatch");
    auto f = [&](const VectorXd& x) { return gp.lcb(x); };
    std::vector<VectorXd> starts;
    starts.push_back(incumbent.cwiseMax(lo).cwiseMin(hi));
    for (int r = 0; r < cfg.restarts; ++r) {
        VectorXd s(lo.size());
        for (Eigen::Index i = 0; i < lo.size(); ++i) s[i] = rng.uniform(lo[i], hi[i]);
        starts.push_back(s);
    }
    VectorXd best = starts.front();
    double best_val = f(best);
    for (const auto& s : starts) {
        const double v0 = f(s);
        if (v0 < best_val) {
            best_val = v0;
            best = s;
        }
        const VectorXd x = minimize_in_box(f, s, lo, hi, cfg);
        const double v = f(x);
        if (v < best_val) {
            best_val = v;
            best = x;
        }
    }
    return best.cwiseMax(lo).cwiseMin(hi);
}

}  // namespace exo
