#pragma once

// Sliding-window VAE anomaly detector over logged interaction torque and joint
// kinematics. Score = reconstruction MSE of the window through the mean latent.

#include "exo/common.hpp"
#include "exo/csv.hpp"
#include "exo/neural.hpp"
#include "exo/session.hpp"
#include "exo/wearer.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

namespace exo {

/// Which signals feed the detector. The kinematic channel is the per-joint angle.
enum class Modality : std::uint8_t { multimodal = 0, torque_only = 1, phase_only = 2 };

inline const char* to_string(Modality m) {
    switch (m) {
        case Modality::multimodal: return "multimodal";
        case Modality::torque_only: return "torque_only";
        case Modality::phase_only: return "phase_only";
    }
    return "?";
}

inline Modality parse_modality(const std::string& s) {
    if (s == "multimodal") return Modality::multimodal;
    if (s == "torque_only") return Modality::torque_only;
    if (s == "phase_only") return Modality::phase_only;
    throw std::invalid_argument("unknown modality '" + s + "'");
}

struct WindowSpec {
    int length = 50;
    int stride = 10;
    Modality modality = Modality::multimodal;

    void validate() const {
        if (stride < 1 || length < 2 * stride) throw std::invalid_argument("WindowSpec: need stride >= 1 and length >= 2*stride");
    }
};

/// Per-channel min-max constants.
struct Normalization {
    VectorXd lo, hi;

    int channels() const { return static_cast<int>(lo.size()); }

    void validate() const {
        if (lo.size() != hi.size() || lo.size() == 0) throw std::invalid_argument("Normalization: bad channel count");
        if ((hi.array() <= lo.array()).any()) throw std::invalid_argument("Normalization: need min < max per channel");
    }
};

/// Time series (samples x channels) of the selected modality.
inline MatrixXd extract_channels(const EpisodeLog& log, Modality m) {
    const auto n = static_cast<Eigen::Index>(log.size());
    const int J = log.joints;
    const bool torque = m != Modality::phase_only;
    const bool kin = m != Modality::torque_only;
    const int c = (torque ? J : 0) + (kin ? J : 0);
    MatrixXd out(n, c);
    for (Eigen::Index k = 0; k < n; ++k) {
        int col = 0;
        if (torque)
            for (int i = 0; i < J; ++i) out(k, col++) = log.at(log.tau_hat, static_cast<std::size_t>(k), i);
        if (kin)
            for (int i = 0; i < J; ++i) out(k, col++) = log.at(log.q, static_cast<std::size_t>(k), i);
    }
    return out;
}

/// Min/max over a set of series; degenerate channels get a unit range.
inline Normalization fit_normalization(const std::vector<MatrixXd>& series) {
    if (series.empty() || series.front().cols() == 0) throw std::invalid_argument("fit_normalization: no data");
    const auto c = series.front().cols();
    Normalization n;
    n.lo = VectorXd::Constant(c, std::numeric_limits<double>::infinity());
    n.hi = VectorXd::Constant(c, -std::numeric_limits<double>::infinity());
    for (const auto& s : series) {
        if (s.cols() != c) throw std::invalid_argument("fit_normalization: channel count differs between series");
        if (s.rows() == 0) continue;
        n.lo = n.lo.cwiseMin(s.colwise().minCoeff().transpose());
        n.hi = n.hi.cwiseMax(s.colwise().maxCoeff().transpose());
    }
    for (Eigen::Index i = 0; i < c; ++i)
        if (!(n.hi[i] > n.lo[i])) n.hi[i] = n.lo[i] + 1.0;
    return n;
}

inline double normalize(const Normalization& n, int channel, double v) { return (v - n.lo[channel]) / (n.hi[channel] - n.lo[channel]); }
inline double denormalize(const Normalization& n, int channel, double u) { return n.lo[channel] + u * (n.hi[channel] - n.lo[channel]); }

/// Number of windows for a series of `samples` rows.
inline std::size_t window_count(std::size_t samples, const WindowSpec& spec) {
    if (samples < static_cast<std::size_t>(spec.length)) return 0;
    return (samples - static_cast<std::size_t>(spec.length)) / static_cast<std::size_t>(spec.stride) + 1;
}

/// One normalized window flattened channel-major, covering rows [begin, begin + length).
inline VectorXd window_vector(const MatrixXd& series, Eigen::Index begin, int length, const Normalization& n) {
    const auto c = series.cols();
    if (c != n.channels()) throw std::invalid_argument("window_vector: channel count does not match normalization");
    if (begin < 0 || begin + length > series.rows()) throw std::out_of_range("window_vector: window outside series");
    VectorXd v(c * length);
    for (Eigen::Index ch = 0; ch < c; ++ch)
        for (int k = 0; k < length; ++k)
            v[ch * length + k] = normalize(n, static_cast<int>(ch), series(begin + k, ch));
    return v;
}

/// All windows of a series as columns.
inline MatrixXd segment(const MatrixXd& series, const WindowSpec& spec, const Normalization& n) {
    spec.validate();
    if (series.rows() < spec.length)
        throw std::invalid_argument("segment: series has " + std::to_string(series.rows()) + " samples, window needs " +
                                    std::to_string(spec.length));
    const std::size_t count = window_count(static_cast<std::size_t>(series.rows()), spec);
    MatrixXd out(series.cols() * spec.length, static_cast<Eigen::Index>(count));
    for (std::size_t w = 0; w < count; ++w)
        out.col(static_cast<Eigen::Index>(w)) = window_vector(series, static_cast<Eigen::Index>(w) * spec.stride, spec.length, n);
    return out;
}

/// Anomaly label per window: true if at least half the window overlaps a conflict interval.
inline std::vector<int> window_labels(const EpisodeLog& log, const WindowSpec& spec, const std::vector<ConflictEvent>& events) {
    const std::size_t count = window_count(log.size(), spec);
    std::vector<int> labels(count, 0);
    for (std::size_t w = 0; w < count; ++w) {
        const std::size_t b = w * static_cast<std::size_t>(spec.stride);
        int inside = 0;
        for (int k = 0; k < spec.length; ++k) {
            const double t = log.t[b + static_cast<std::size_t>(k)];
            for (const auto& e : events)
                if (t >= e.onset && t <= e.onset + e.duration) {
                    ++inside;
                    break;
                }
        }
        labels[w] = 2 * inside >= spec.length ? 1 : 0;
    }
    return labels;
}

struct VaeConfig {
    int latent = 8;
    int hidden = 64;
    double kl_weight = 0.01;  // relative to the summed squared reconstruction error
    nn::TrainConfig train{1e-3, 32, 40, 1};

    void validate() const {
        if (latent < 1 || hidden < 1 || !(kl_weight >= 0.0)) throw std::invalid_argument("VaeConfig: latent, hidden >= 1 and kl_weight >= 0");
        train.validate();
    }
};

struct VaeModel {
    WindowSpec spec;
    Normalization norm;
    int latent = 0;
    nn::DenseNet encoder;  // window -> [mu; log var]
    nn::DenseNet decoder;  // latent -> window

    int input_dim() const { return norm.channels() * spec.length; }
};

struct VaeTraining {
    VaeModel model;
    nn::TrainResult curve;
};

/// KL(N(mu, exp(logvar)) || N(0, I)).
inline double gaussian_kl(const VectorXd& mu, const VectorXd& logvar) {
    return 0.5 * (mu.array().square() + logvar.array().exp() - logvar.array() - 1.0).sum();
}

/// Train on normalized windows (columns). Loss per window: sum of squared reconstruction
/// errors with a reparameterized latent sample, plus kl_weight * KL.
inline VaeTraining train_vae(const MatrixXd& windows, const WindowSpec& spec, const Normalization& norm, const VaeConfig& cfg) {
    cfg.validate();
    spec.validate();
    norm.validate();
    const int dim = norm.channels() * spec.length;
    if (windows.rows() != dim) throw std::invalid_argument("train_vae: window dimension does not match spec");
    if (windows.cols() < 100) throw std::invalid_argument("train_vae: need at least 100 windows, got " + std::to_string(windows.cols()));
    using nn::Activation;
    VaeTraining out;
    VaeModel& m = out.model;
    m.spec = spec;
    m.norm = norm;
    m.latent = cfg.latent;
    Rng init(cfg.train.seed ^ 0x5EEDULL);
    m.encoder = nn::DenseNet::initialized({dim, cfg.hidden, cfg.hidden, 2 * cfg.latent},
                                          {Activation::tanh, Activation::tanh, Activation::identity}, init.next_u64());
    m.decoder = nn::DenseNet::initialized({cfg.latent, cfg.hidden, cfg.hidden, dim},
                                          {Activation::tanh, Activation::tanh, Activation::identity}, init.next_u64());
    const Eigen::Index L = cfg.latent;
    nn::DenseNet* nets[] = {&m.encoder, &m.decoder};
    nn::BatchLoss loss = [&](const std::vector<std::size_t>& batch, std::vector<nn::Gradients>& grads, Rng& rng) {
        const auto b = static_cast<Eigen::Index>(batch.size());
        MatrixXd x(dim, b);
        for (Eigen::Index i = 0; i < b; ++i) x.col(i) = windows.col(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]));
        const nn::ForwardCache enc = nn::forward_cached(m.encoder, x);
        const MatrixXd mu = enc.output.topRows(L);
        const MatrixXd logvar = enc.output.bottomRows(L);
        const MatrixXd sigma = (0.5 * logvar.array()).exp().matrix();
        MatrixXd eps(L, b);
        for (Eigen::Index j = 0; j < b; ++j)
            for (Eigen::Index i = 0; i < L; ++i) eps(i, j) = rng.normal();
        const MatrixXd z = mu + sigma.cwiseProduct(eps);
        const nn::ForwardCache dec = nn::forward_cached(m.decoder, z);
        const MatrixXd diff = dec.output - x;
        const double inv_b = 1.0 / static_cast<double>(b);
        double kl = 0.0;
        for (Eigen::Index j = 0; j < b; ++j) kl += gaussian_kl(mu.col(j), logvar.col(j));
        grads[1] = nn::backward(m.decoder, dec, 2.0 * inv_b * diff);
        const MatrixXd& dz = grads[1].input;
        MatrixXd denc(2 * L, b);
        denc.topRows(L) = dz + cfg.kl_weight * inv_b * mu;
        denc.bottomRows(L) = (dz.array() * eps.array() * 0.5 * sigma.array() +
                              cfg.kl_weight * inv_b * 0.5 * (logvar.array().exp() - 1.0))
                                 .matrix();
        grads[0] = nn::backward(m.encoder, enc, denc);
        return (diff.squaredNorm() + cfg.kl_weight * kl) * inv_b;
    };
    out.curve = nn::fit(nets, static_cast<std::size_t>(windows.cols()), loss, cfg.train);
    return out;
}

/// Reconstruction MSE of normalized windows (columns) through the mean latent.
inline VectorXd score_windows(const VaeModel& m, const MatrixXd& windows) {
    if (windows.rows() != m.input_dim())
        throw std::invalid_argument("score: window has " + std::to_string(windows.rows()) + " values, model expects " +
                                    std::to_string(m.input_dim()));
    const MatrixXd mu = nn::forward(m.encoder, windows).topRows(m.latent);
    const MatrixXd rec = nn::forward(m.decoder, mu);
    return (rec - windows).colwise().squaredNorm().transpose() / static_cast<double>(windows.rows());
}

inline double score(const VaeModel& m, const VectorXd& window) { return score_windows(m, window)[0]; }

/// Normalize over `logs`, window them and train.
inline VaeTraining train_detector(const std::vector<EpisodeLog>& logs, const WindowSpec& spec, const VaeConfig& cfg) {
    std::vector<MatrixXd> series;
    for (const auto& l : logs) series.push_back(extract_channels(l, spec.modality));
    const Normalization norm = fit_normalization(series);
    std::vector<MatrixXd> parts;
    Eigen::Index total = 0;
    for (const auto& s : series) {
        parts.push_back(segment(s, spec, norm));
        total += parts.back().cols();
    }
    MatrixXd X(norm.channels() * spec.length, total);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        X.middleCols(c, p.cols()) = p;
        c += p.cols();
    }
    return train_vae(X, spec, norm, cfg);
}

/// Score function for a live session: scores the window that ends at log sample `end`.
inline ScoreFn make_score_fn(const VaeModel& m) {
    return [m](const EpisodeLog& log, std::size_t end) {
        if (end < static_cast<std::size_t>(m.spec.length)) return 0.0;
        const MatrixXd series = extract_channels(log, m.spec.modality);
        return score(m, window_vector(series, static_cast<Eigen::Index>(end) - m.spec.length, m.spec.length, m.norm));
    };
}

struct RocCurve {
    std::vector<double> fpr, tpr;
    double auc = 0.0;
};

/// ROC over all score thresholds (higher score = anomalous) with tied scores grouped;
/// AUC by trapezoidal integration.
inline RocCurve evaluate_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("evaluate_auc: scores and labels differ in length");
    const auto pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
    const double neg = static_cast<double>(labels.size()) - pos;
    if (pos == 0.0 || neg == 0.0) throw std::invalid_argument("evaluate_auc: need both normal and anomalous windows");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    RocCurve r;
    r.fpr.push_back(0.0);
    r.tpr.push_back(0.0);
    double tp = 0.0, fp = 0.0;
    for (std::size_t k = 0; k < order.size();) {
        const double s = scores[order[k]];
        while (k < order.size() && scores[order[k]] == s) {
            (labels[order[k]] ? tp : fp) += 1.0;
            ++k;
        }
        r.fpr.push_back(fp / neg);
        r.tpr.push_back(tp / pos);
    }
    for (std::size_t k = 1; k < r.fpr.size(); ++k) r.auc += 0.5 * (r.fpr[k] - r.fpr[k - 1]) * (r.tpr[k] + r.tpr[k - 1]);
    return r;
}

// Model file: header line, then u32 length, u32 stride, u8 modality, u32 latent,
// u32 channel count, f64 lo[c], f64 hi[c], encoder net, decoder net.

inline void save_vae(const std::string& path, const VaeModel& m, const std::string& header) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << header << '\n';
    nn::detail::put_u32(os, static_cast<std::uint32_t>(m.spec.length));
    nn::detail::put_u32(os, static_cast<std::uint32_t>(m.spec.stride));
    os.put(static_cast<char>(m.spec.modality));
    nn::detail::put_u32(os, static_cast<std::uint32_t>(m.latent));
    nn::detail::put_u32(os, static_cast<std::uint32_t>(m.norm.channels()));
    for (int i = 0; i < m.norm.channels(); ++i) nn::detail::put_f64(os, m.norm.lo[i]);
    for (int i = 0; i < m.norm.channels(); ++i) nn::detail::put_f64(os, m.norm.hi[i]);
    nn::write_net(os, m.encoder);
    nn::write_net(os, m.decoder);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline VaeModel load_vae(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string header;
    std::getline(is, header);
    if (header.rfind("# config_hash=", 0) != 0) throw std::runtime_error(path + ": missing header line");
    VaeModel m;
    m.spec.length = static_cast<int>(nn::detail::get_u32(is));
    m.spec.stride = static_cast<int>(nn::detail::get_u32(is));
    const int mod = is.get();
    if (mod < 0 || mod > 2) throw std::runtime_error(path + ": bad modality code");
    m.spec.modality = static_cast<Modality>(mod);
    m.latent = static_cast<int>(nn::detail::get_u32(is));
    const auto c = static_cast<Eigen::Index>(nn::detail::get_u32(is));
    m.norm.lo.resize(c);
    m.norm.hi.resize(c);
    for (Eigen::Index i = 0; i < c; ++i) m.norm.lo[i] = nn::detail::get_f64(is);
    for (Eigen::Index i = 0; i < c; ++i) m.norm.hi[i] = nn::detail::get_f64(is);
    m.encoder = nn::read_net(is);
    m.decoder = nn::read_net(is);
    m.spec.validate();
    m.norm.validate();
    if (m.encoder.input_dim() != m.input_dim() || m.encoder.output_dim() != 2 * m.latent || m.decoder.input_dim() != m.latent ||
        m.decoder.output_dim() != m.input_dim())
        throw std::runtime_error(path + ": network shapes do not match the header");
    return m;
}

}  // namespace exo
