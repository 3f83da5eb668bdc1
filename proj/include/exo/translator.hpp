#pragma once

// Task translation: predict a subject's task DMP from their walking DMP.
// Networks and ridge maps work on standardized translation vectors of the
// template joint (both knees share weights and differ only by phase shift).

#include "exo/dmp.hpp"
#include "exo/neural.hpp"
#include "exo/scenario.hpp"
#include "exo/wearer.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace exo {

/// Translation vector of joint 0 ([W, offset] or [W, start, goal]).
inline VectorXd template_vector(const DmpModel& m) {
    DmpModel one = m;
    one.W = m.W.topRows(1);
    one.offset = m.offset.head(1);
    one.goal = m.goal.head(1);
    one.phase_shift = m.phase_shift.head(1);
    return dmp_to_vector(one);
}

/// Inverse of template_vector, copying the result to every joint of `shape`.
inline DmpModel model_from_template(const DmpModel& shape, const VectorXd& v) {
    DmpModel one = shape;
    one.W = shape.W.topRows(1);
    one.offset = shape.offset.head(1);
    one.goal = shape.goal.head(1);
    one.phase_shift = shape.phase_shift.head(1);
    dmp_from_vector(one, v);
    DmpModel out = shape;
    for (int i = 0; i < shape.joints(); ++i) {
        out.W.row(i) = one.W.row(0);
        out.offset[i] = one.offset[0];
        out.goal[i] = one.goal[0];
    }
    return out;
}

struct TranslationDataset {
    Task task = Task::stairs_up;
    std::vector<int> subjects;  // subject ids, one per row
    MatrixXd X;                 // walking vectors (rows = subjects)
    MatrixXd Y;                 // task vectors
    DmpModel target_shape;      // metadata for rebuilding task models

    Eigen::Index size() const { return X.rows(); }
};

inline TranslationDataset build_translation_dataset(const std::vector<SubjectProfile>& pop, Task task,
                                                    const KernelCounts& kernels = {}) {
    if (task == Task::walk) throw std::invalid_argument("translation target must differ from walking");
    if (pop.empty()) throw std::invalid_argument("build_translation_dataset: empty population");
    TranslationDataset d;
    d.task = task;
    for (std::size_t k = 0; k < pop.size(); ++k) {
        const VectorXd x = template_vector(subject_model(pop[k], Task::walk, kernels));
        const DmpModel tm = subject_model(pop[k], task, kernels);
        const VectorXd y = template_vector(tm);
        if (k == 0) {
            d.X.resize(static_cast<Eigen::Index>(pop.size()), x.size());
            d.Y.resize(static_cast<Eigen::Index>(pop.size()), y.size());
            d.target_shape = tm;
        }
        d.X.row(static_cast<Eigen::Index>(k)) = x.transpose();
        d.Y.row(static_cast<Eigen::Index>(k)) = y.transpose();
        d.subjects.push_back(pop[k].id);
    }
    return d;
}

/// Column-wise z-scoring; zero-variance columns keep unit scale.
struct Standardizer {
    VectorXd mean, scale;

    static Standardizer fit(const MatrixXd& rows) {
        Standardizer s;
        s.mean = rows.colwise().mean().transpose();
        s.scale.resize(rows.cols());
        for (Eigen::Index j = 0; j < rows.cols(); ++j) {
            const double var = (rows.col(j).array() - s.mean[j]).square().mean();
            s.scale[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
        return s;
    }
    MatrixXd apply(const MatrixXd& rows) const {
        return (rows.rowwise() - mean.transpose()).array().rowwise() / scale.transpose().array();
    }
    MatrixXd invert(const MatrixXd& rows) const {
        return (rows.array().rowwise() * scale.transpose().array()).matrix().rowwise() + mean.transpose();
    }
};

/// Projection of standardized rows onto the leading principal directions that explain
/// `variance` of the total, rescaled to unit variance.
struct Projection {
    MatrixXd basis;  // inputs x components; empty = identity

    static Projection fit(const MatrixXd& z, double variance) {
        Projection p;
        if (!(variance > 0.0 && variance < 1.0) || z.rows() < 2) return p;
        Eigen::JacobiSVD<MatrixXd> svd(z, Eigen::ComputeThinV);
        const VectorXd ev = svd.singularValues().array().square();
        const double total = ev.sum();
        if (!(total > 0.0)) return p;
        Eigen::Index k = 0;
        for (double acc = 0.0; k < ev.size() && acc < variance * total; ++k) acc += ev[k];
        p.basis = svd.matrixV().leftCols(k);
        for (Eigen::Index j = 0; j < k; ++j) p.basis.col(j) /= std::sqrt(ev[j] / static_cast<double>(z.rows()));
        return p;
    }
    Eigen::Index components() const { return basis.cols(); }
    MatrixXd apply(const MatrixXd& z) const { return basis.size() == 0 ? z : MatrixXd(z * basis); }
};

/// Affine map y = B^T (x - x_mean) + y_mean fitted by ridge regression.
struct RidgeMap {
    VectorXd x_mean, y_mean;
    MatrixXd B;  // inputs x outputs

    MatrixXd predict(const MatrixXd& X) const { return ((X.rowwise() - x_mean.transpose()) * B).rowwise() + y_mean.transpose(); }
};

inline RidgeMap fit_ridge(const MatrixXd& X, const MatrixXd& Y, double lambda) {
    if (X.rows() != Y.rows() || X.rows() < 2) throw std::invalid_argument("fit_ridge: need matching rows and >= 2 samples");
    if (!(lambda >= 0.0)) throw std::invalid_argument("fit_ridge: lambda must be >= 0");
    RidgeMap r;
    r.x_mean = X.colwise().mean().transpose();
    r.y_mean = Y.colwise().mean().transpose();
    const MatrixXd Xc = X.rowwise() - r.x_mean.transpose();
    const MatrixXd Yc = Y.rowwise() - r.y_mean.transpose();
    MatrixXd G = Xc.transpose() * Xc;
    G.diagonal().array() += lambda;
    Eigen::FullPivLU<MatrixXd> lu(G);
    if (lu.rank() < G.rows())
        throw std::runtime_error("fit_ridge: normal matrix is singular (rank " + std::to_string(lu.rank()) + " of " +
                                 std::to_string(G.rows()) + "); use lambda > 0");
    r.B = lu.solve(Xc.transpose() * Yc);
    return r;
}

/// Closed-form leave-one-out squared error of a centred ridge fit.
inline double ridge_loo_error(const MatrixXd& X, const MatrixXd& Y, double lambda) {
    const auto n = X.rows();
    const MatrixXd Xc = X.rowwise() - X.colwise().mean();
    const MatrixXd Yc = Y.rowwise() - Y.colwise().mean();
    MatrixXd G = Xc.transpose() * Xc;
    G.diagonal().array() += lambda;
    const MatrixXd H = Xc * G.ldlt().solve(Xc.transpose());
    const MatrixXd R = Yc - H * Yc;
    double err = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double h = H(i, i) + 1.0 / static_cast<double>(n);
        err += R.row(i).squaredNorm() / std::max(1e-12, (1.0 - h) * (1.0 - h));
    }
    return err / static_cast<double>(n);
}

/// Ridge penalty from a log grid 1e-3..1e3 minimizing the leave-one-out error.
inline double select_ridge_lambda(const MatrixXd& X, const MatrixXd& Y) {
    double best = 1.0, best_err = std::numeric_limits<double>::infinity();
    for (int e = -12; e <= 12; ++e) {
        const double lambda = std::pow(10.0, e / 4.0);
        const double err = ridge_loo_error(X, Y, lambda);
        if (err < best_err) {
            best_err = err;
            best = lambda;
        }
    }
    return best;
}

struct TranslatorConfig {
    int hidden = 32;
    double input_variance = 0.95;  // network input: principal components of the walking vector covering this share
    double ridge_lambda = 1.0;     // standardized units; 0 selects it by inner leave-one-out
    nn::TrainConfig train{1e-2, 16, 800, 1};

    void validate() const {
        if (hidden < 1 || !(ridge_lambda >= 0.0) || !(input_variance > 0.0 && input_variance <= 1.0))
            throw std::invalid_argument("translator: hidden >= 1, ridge_lambda >= 0, input_variance in (0, 1]");
        train.validate();
    }
};

enum class TranslatorMethod { nn, ridge };

inline const char* to_string(TranslatorMethod m) { return m == TranslatorMethod::nn ? "nn" : "ridge"; }

/// A fitted translator: standardization plus either network or ridge map.
struct Translator {
    TranslatorMethod method = TranslatorMethod::nn;
    Standardizer sx, sy;
    Projection px;
    nn::DenseNet net;
    RidgeMap ridge;
    nn::TrainResult curve;

    MatrixXd predict(const MatrixXd& X) const {
        const MatrixXd z = px.apply(sx.apply(X));
        if (method == TranslatorMethod::ridge) return sy.invert(ridge.predict(z));
        return sy.invert(nn::forward(net, MatrixXd(z.transpose())).transpose());
    }
    VectorXd predict(const VectorXd& x) const { return predict(MatrixXd(x.transpose())).row(0).transpose(); }
};

/// Fit on the rows of X, Y (subjects). Frobenius loss over standardized targets.
inline Translator fit_translator(const MatrixXd& X, const MatrixXd& Y, TranslatorMethod method, const TranslatorConfig& cfg) {
    cfg.validate();
    if (X.rows() < 3) throw std::invalid_argument("fit_translator: need at least 3 training subjects, got " + std::to_string(X.rows()));
    if (X.rows() != Y.rows()) throw std::invalid_argument("fit_translator: X and Y row counts differ");
    Translator t;
    t.method = method;
    t.sx = Standardizer::fit(X);
    t.sy = Standardizer::fit(Y);
    const MatrixXd zy = t.sy.apply(Y);
    if (method == TranslatorMethod::ridge) {
        const MatrixXd zx = t.sx.apply(X);
        t.ridge = fit_ridge(zx, zy, cfg.ridge_lambda > 0.0 ? cfg.ridge_lambda : select_ridge_lambda(zx, zy));
        return t;
    }
    t.px = Projection::fit(t.sx.apply(X), cfg.input_variance);
    const MatrixXd zx = t.px.apply(t.sx.apply(X));
    using nn::Activation;
    t.net = nn::DenseNet::initialized({static_cast<int>(zx.cols()), cfg.hidden, static_cast<int>(Y.cols())},
                                      {Activation::tanh, Activation::identity}, cfg.train.seed);
    t.curve = nn::train_mse(t.net, zx.transpose(), zy.transpose(), cfg.train);
    return t;
}

/// RMSE (degrees) between the predicted model's output and the subject's true task motion.
/// Rhythmic: one settled cycle at unit period; discrete: the movement duration.
inline double trajectory_rmse_deg(const DmpModel& predicted, const SubjectProfile& subject, Task task) {
    const double dt = 1e-3;
    double sse = 0.0;
    long count = 0;
    if (is_rhythmic(task)) {
        const Trajectory tr = integrate_output(predicted, kTwoPi, 1.0, dt, 2);
        const HarmonicGait& g = subject.gait(task);
        for (Eigen::Index k = 0; k < tr.q.rows(); ++k)
            for (int i = 0; i < predicted.joints(); ++i) {
                const double e = tr.q(k, i) - g.value(kTwoPi * tr.t[k] + predicted.phase_shift[i]);
                sse += e * e;
                ++count;
            }
    } else {
        const DiscreteMotion& m = subject.motion(task);
        const Trajectory tr = integrate_output(predicted, 0.0, m.duration, dt);
        for (Eigen::Index k = 0; k < tr.q.rows(); ++k)
            for (int i = 0; i < predicted.joints(); ++i) {
                const double e = tr.q(k, i) - m.value(tr.t[k]);
                sse += e * e;
                ++count;
            }
    }
    return rad2deg(std::sqrt(sse / static_cast<double>(count)));
}

struct LoocvResult {
    std::vector<int> subjects;
    std::vector<double> rmse_deg;

    double mean() const {
        double s = 0.0;
        for (double v : rmse_deg) s += v;
        return rmse_deg.empty() ? 0.0 : s / static_cast<double>(rmse_deg.size());
    }
};

/// Leave-one-subject-out evaluation. `pop` must hold the subjects of `d` in row order.
inline LoocvResult loocv(const TranslationDataset& d, const std::vector<SubjectProfile>& pop, TranslatorMethod method,
                         const TranslatorConfig& cfg) {
    const Eigen::Index n = d.size();
    if (n < 4) throw std::invalid_argument("loocv: need at least 4 subjects, got " + std::to_string(n));
    if (static_cast<Eigen::Index>(pop.size()) != n) throw std::invalid_argument("loocv: population does not match dataset");
    LoocvResult r;
    for (Eigen::Index h = 0; h < n; ++h) {
        MatrixXd X(n - 1, d.X.cols()), Y(n - 1, d.Y.cols());
        for (Eigen::Index k = 0, row = 0; k < n; ++k) {
            if (k == h) continue;
            X.row(row) = d.X.row(k);
            Y.row(row++) = d.Y.row(k);
        }
        const Translator t = fit_translator(X, Y, method, cfg);
        const DmpModel pred = model_from_template(d.target_shape, t.predict(VectorXd(d.X.row(h).transpose())));
        r.subjects.push_back(d.subjects[static_cast<std::size_t>(h)]);
        r.rmse_deg.push_back(trajectory_rmse_deg(pred, pop[static_cast<std::size_t>(h)], d.task));
    }
    return r;
}

// Translator file: header line, u8 method, u8 target task, then matrices as
// (u32 rows, u32 cols, f64 column-major data), then the network for nn.

namespace detail {

inline void put_matrix(std::ostream& os, const MatrixXd& m) {
    nn::detail::put_u32(os, static_cast<std::uint32_t>(m.rows()));
    nn::detail::put_u32(os, static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) nn::detail::put_f64(os, m.data()[i]);
}

inline MatrixXd get_matrix(std::istream& is) {
    const auto r = nn::detail::get_u32(is), c = nn::detail::get_u32(is);
    if (static_cast<std::uint64_t>(r) * c > (1u << 24)) throw std::runtime_error("translator file: implausible matrix size");
    MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nn::detail::get_f64(is);
    return m;
}

}  // namespace detail

inline void save_translator(const std::string& path, const Translator& t, Task task, const std::string& header) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << header << '\n';
    os.put(static_cast<char>(t.method));
    os.put(static_cast<char>(task));
    for (const MatrixXd& m : {MatrixXd(t.sx.mean), MatrixXd(t.sx.scale), MatrixXd(t.sy.mean), MatrixXd(t.sy.scale), t.px.basis,
                              MatrixXd(t.ridge.x_mean), MatrixXd(t.ridge.y_mean), t.ridge.B})
        detail::put_matrix(os, m);
    if (t.method == TranslatorMethod::nn) nn::write_net(os, t.net);
    if (!os) throw std::runtime_error("write failed: " + path);
}

struct LoadedTranslator {
    Translator translator;
    Task task = Task::stairs_up;
};

inline LoadedTranslator load_translator(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string header;
    std::getline(is, header);
    if (header.rfind("# config_hash=", 0) != 0) throw std::runtime_error(path + ": missing header line");
    const int method = is.get(), task = is.get();
    if (method < 0 || method > 1 || task < 1 || task > 4) throw std::runtime_error(path + ": bad method or task code");
    LoadedTranslator out;
    out.task = static_cast<Task>(task);
    Translator& t = out.translator;
    t.method = static_cast<TranslatorMethod>(method);
    t.sx.mean = detail::get_matrix(is);
    t.sx.scale = detail::get_matrix(is);
    t.sy.mean = detail::get_matrix(is);
    t.sy.scale = detail::get_matrix(is);
    t.px.basis = detail::get_matrix(is);
    t.ridge.x_mean = detail::get_matrix(is);
    t.ridge.y_mean = detail::get_matrix(is);
    t.ridge.B = detail::get_matrix(is);
    if (t.method == TranslatorMethod::nn) t.net = nn::read_net(is);
    if (!is) throw std::runtime_error(path + ": truncated");
    return out;
}

}  // namespace exo
