#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace exo {

/// Largest joint count any plant in this library uses. Joint-space vectors and
/// matrices are runtime-sized up to this bound so that stepping never allocates.
inline constexpr int kMaxDof = 2;

using JointVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDof, 1>;
using JointMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDof, kMaxDof>;

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Raised when a simulated trajectory produces non-finite values.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline bool all_finite(const Eigen::Ref<const MatrixXd>& m) { return m.allFinite(); }

/// Seeded generator with distribution code written out explicitly, so that
/// sequences are identical across standard library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; the spare value is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(kTwoPi * u2);
        has_spare_ = true;
        return r * std::cos(kTwoPi * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        if (n == 0) throw std::invalid_argument("Rng::index: empty range");
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

    template <typename Vec>
    void shuffle(Vec& v) {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[index(i)]);
    }

    /// Independent child stream; used to give each subject/episode its own sequence.
    Rng split() { return Rng(next_u64() ^ 0x9E3779B97F4A7C15ULL); }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

/// Smoothstep-style ramp, 0 below a, 1 above b, C1 in between.
inline double smooth_ramp(double x, double a, double b) {
    if (x <= a) return 0.0;
    if (x >= b) return 1.0;
    const double s = (x - a) / (b - a);
    return s * s * (3.0 - 2.0 * s);
}

inline double smooth_ramp_derivative(double x, double a, double b) {
    if (x <= a || x >= b) return 0.0;
    const double s = (x - a) / (b - a);
    return 6.0 * s * (1.0 - s) / (b - a);
}

}  // namespace exo
