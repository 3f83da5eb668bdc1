#pragma once

// Dense feed-forward networks: forward/backward passes over column batches,
// Adam training, and a flat little-endian binary parameter format.

#include "exo/common.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <istream>
#include <numeric>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace exo::nn {

enum class Activation : std::uint8_t { identity = 0, tanh = 1, relu = 2 };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::tanh: return "tanh";
        case Activation::relu: return "relu";
    }
    return "?";
}

struct Layer {
    MatrixXd weight;  // out x in
    VectorXd bias;    // out
    Activation activation = Activation::identity;
};

class DenseNet {
public:
    DenseNet() = default;

    /// Zero-initialised network with the given layer widths (sizes.size() == activations.size() + 1).
    DenseNet(const std::vector<int>& sizes, const std::vector<Activation>& activations) {
        if (sizes.size() < 2 || activations.size() + 1 != sizes.size())
            throw std::invalid_argument("DenseNet: need one activation per layer and at least one layer");
        for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
            if (sizes[l] <= 0 || sizes[l + 1] <= 0) throw std::invalid_argument("DenseNet: layer widths must be positive");
            layers_.push_back({MatrixXd::Zero(sizes[l + 1], sizes[l]), VectorXd::Zero(sizes[l + 1]), activations[l]});
        }
    }

    /// Uniform(+-sqrt(6/(fan_in+fan_out))) weights, zero biases.
    static DenseNet initialized(const std::vector<int>& sizes, const std::vector<Activation>& activations,
                                std::uint64_t seed) {
        DenseNet net(sizes, activations);
        Rng rng(seed);
        for (auto& layer : net.layers_) {
            const double limit = std::sqrt(6.0 / static_cast<double>(layer.weight.rows() + layer.weight.cols()));
            for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = rng.uniform(-limit, limit);
        }
        return net;
    }

    int input_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
    int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }
    std::size_t layer_count() const { return layers_.size(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    std::vector<int> sizes() const {
        std::vector<int> s;
        if (layers_.empty()) return s;
        s.push_back(input_dim());
        for (const auto& l : layers_) s.push_back(static_cast<int>(l.weight.rows()));
        return s;
    }

    std::vector<Layer>& layers() { return layers_; }
    const std::vector<Layer>& layers() const { return layers_; }

    bool parameters_finite() const {
        for (const auto& l : layers_)
            if (!l.weight.allFinite() || !l.bias.allFinite()) return false;
        return true;
    }

    /// Flat copy of all parameters, layer by layer, weights row-major then bias.
    VectorXd flatten() const {
        VectorXd out(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index k = 0;
        for (const auto& l : layers_) {
            for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < l.weight.cols(); ++j) out[k++] = l.weight(i, j);
            for (Eigen::Index i = 0; i < l.bias.size(); ++i) out[k++] = l.bias[i];
        }
        return out;
    }

    void unflatten(const VectorXd& p) {
        if (static_cast<std::size_t>(p.size()) != parameter_count())
            throw std::invalid_argument("DenseNet::unflatten: parameter count mismatch");
        Eigen::Index k = 0;
        for (auto& l : layers_) {
            for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
                for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = p[k++];
            for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = p[k++];
        }
    }

private:
    std::vector<Layer> layers_;
};

namespace detail {

inline void activate(MatrixXd& m, Activation a) {
    switch (a) {
        case Activation::identity: break;
        case Activation::tanh: m = m.array().tanh().matrix(); break;
        case Activation::relu: m = m.array().max(0.0).matrix(); break;
    }
}

// Derivative expressed through the pre-activation and the activated output.
inline MatrixXd activation_grad(const MatrixXd& pre, const MatrixXd& post, Activation a) {
    switch (a) {
        case Activation::identity: return MatrixXd::Ones(pre.rows(), pre.cols());
        case Activation::tanh: return (1.0 - post.array().square()).matrix();
        case Activation::relu: return (pre.array() > 0.0).cast<double>().matrix();
    }
    return MatrixXd();
}

}  // namespace detail

/// Per-layer inputs and pre-activations of one forward pass; required by backward().
struct ForwardCache {
    std::vector<MatrixXd> inputs;
    std::vector<MatrixXd> pre;
    MatrixXd output;

    bool empty() const { return inputs.empty(); }
};

/// Batched forward pass; each column of `batch` is one sample.
inline MatrixXd forward(const DenseNet& net, const MatrixXd& batch) {
    if (net.layer_count() == 0) throw std::invalid_argument("forward: empty network");
    if (batch.rows() != net.input_dim())
        throw std::invalid_argument("forward: input has " + std::to_string(batch.rows()) + " rows, network expects " +
                                    std::to_string(net.input_dim()));
    MatrixXd h = batch;
    for (const auto& l : net.layers()) {
        MatrixXd next = l.weight * h;
        next.colwise() += l.bias;
        detail::activate(next, l.activation);
        h = std::move(next);
    }
    return h;
}

inline VectorXd forward(const DenseNet& net, const VectorXd& input) {
    return forward(net, MatrixXd(input)).col(0);
}

inline ForwardCache forward_cached(const DenseNet& net, const MatrixXd& batch) {
    if (net.layer_count() == 0) throw std::invalid_argument("forward: empty network");
    if (batch.rows() != net.input_dim()) throw std::invalid_argument("forward: input dimension mismatch");
    ForwardCache cache;
    MatrixXd h = batch;
    for (const auto& l : net.layers()) {
        cache.inputs.push_back(h);
        MatrixXd pre = l.weight * h;
        pre.colwise() += l.bias;
        cache.pre.push_back(pre);
        detail::activate(pre, l.activation);
        h = std::move(pre);
    }
    cache.output = h;
    return cache;
}

/// Parameter gradients (same shapes as the layers) plus the gradient w.r.t. the input batch.
struct Gradients {
    std::vector<MatrixXd> weight;
    std::vector<VectorXd> bias;
    MatrixXd input;

    static Gradients zeros_like(const DenseNet& net) {
        Gradients g;
        for (const auto& l : net.layers()) {
            g.weight.push_back(MatrixXd::Zero(l.weight.rows(), l.weight.cols()));
            g.bias.push_back(VectorXd::Zero(l.bias.size()));
        }
        return g;
    }

    Gradients& operator+=(const Gradients& o) {
        for (std::size_t l = 0; l < weight.size(); ++l) {
            weight[l] += o.weight[l];
            bias[l] += o.bias[l];
        }
        return *this;
    }
};

/// Backpropagates `grad_output` (d loss / d output, one column per sample) through
/// the cached pass. Parameter gradients are summed over the batch.
inline Gradients backward(const DenseNet& net, const ForwardCache& cache, const MatrixXd& grad_output) {
    if (cache.empty() || cache.inputs.size() != net.layer_count())
        throw std::logic_error("backward: no forward cache for this network");
    if (grad_output.rows() != cache.output.rows() || grad_output.cols() != cache.output.cols())
        throw std::invalid_argument("backward: output gradient shape does not match cached output");

    Gradients g;
    const std::size_t n = net.layer_count();
    g.weight.resize(n);
    g.bias.resize(n);
    MatrixXd delta = grad_output;
    for (std::size_t k = n; k-- > 0;) {
        const auto& l = net.layers()[k];
        const MatrixXd& post = (k + 1 == n) ? cache.output : cache.inputs[k + 1];
        delta = delta.cwiseProduct(detail::activation_grad(cache.pre[k], post, l.activation));
        g.weight[k] = delta * cache.inputs[k].transpose();
        g.bias[k] = delta.rowwise().sum();
        delta = l.weight.transpose() * delta;
    }
    g.input = std::move(delta);
    return g;
}

struct TrainConfig {
    double step_size = 1e-3;
    int batch_size = 32;
    int epochs = 100;
    std::uint64_t seed = 1;

    void validate() const {
        if (!(step_size > 0.0) || batch_size < 1 || epochs < 1)
            throw std::invalid_argument("TrainConfig: step size, batch size and epochs must be positive");
    }
};

struct TrainResult {
    std::vector<double> loss_curve;  // mean per-sample loss of each epoch

    double initial_loss() const { return loss_curve.empty() ? 0.0 : loss_curve.front(); }
    double final_loss() const { return loss_curve.empty() ? 0.0 : loss_curve.back(); }
};

/// Adam moments for one network.
class Adam {
public:
    explicit Adam(const DenseNet& net, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : m_(Gradients::zeros_like(net)), v_(Gradients::zeros_like(net)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(DenseNet& net, const Gradients& g, double lr) {
        ++t_;
        const double c1 = 1.0 - std::pow(beta1_, t_);
        const double c2 = 1.0 - std::pow(beta2_, t_);
        auto& layers = net.layers();
        for (std::size_t l = 0; l < layers.size(); ++l) {
            update(layers[l].weight, m_.weight[l], v_.weight[l], g.weight[l], lr, c1, c2);
            update(layers[l].bias, m_.bias[l], v_.bias[l], g.bias[l], lr, c1, c2);
        }
    }

private:
    template <typename P, typename G>
    void update(P& p, P& m, P& v, const G& g, double lr, double c1, double c2) {
        m = beta1_ * m + (1.0 - beta1_) * g;
        v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
        p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
    }

    Gradients m_, v_;
    double beta1_, beta2_, eps_;
    int t_ = 0;
};

/// Loss callback for fit(): given the sample indices of one minibatch, return the
/// mean loss over the batch and write mean gradients for every network into `grads`.
using BatchLoss = std::function<double(const std::vector<std::size_t>& batch, std::vector<Gradients>& grads, Rng& rng)>;

/// Generic minibatch Adam loop over one or more jointly trained networks.
inline TrainResult fit(std::span<DenseNet* const> nets, std::size_t sample_count, const BatchLoss& loss,
                       const TrainConfig& cfg) {
    cfg.validate();
    if (sample_count == 0) throw std::invalid_argument("fit: empty dataset");
    std::vector<Adam> optimizers;
    for (auto* n : nets) optimizers.emplace_back(*n);

    Rng rng(cfg.seed);
    std::vector<std::size_t> order(sample_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    TrainResult result;
    std::vector<Gradients> grads(nets.size());
    std::vector<std::size_t> batch;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t start = 0; start < sample_count; start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(sample_count, start + static_cast<std::size_t>(cfg.batch_size));
            batch.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
            const double batch_loss = loss(batch, grads, rng);
            if (!std::isfinite(batch_loss))
                throw DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch + 1) +
                                      ", batch starting at sample " + std::to_string(start));
            total += batch_loss * static_cast<double>(batch.size());
            for (std::size_t k = 0; k < nets.size(); ++k) optimizers[k].step(*nets[k], grads[k], cfg.step_size);
        }
        result.loss_curve.push_back(total / static_cast<double>(sample_count));
    }
    return result;
}

/// Mean-squared-error regression; samples are the columns of `inputs`/`targets`.
inline TrainResult train_mse(DenseNet& net, const MatrixXd& inputs, const MatrixXd& targets, const TrainConfig& cfg) {
    if (inputs.cols() == 0) throw std::invalid_argument("train_mse: empty dataset");
    if (inputs.cols() != targets.cols() || inputs.rows() != net.input_dim() || targets.rows() != net.output_dim())
        throw std::invalid_argument("train_mse: dataset shape does not match network");
    DenseNet* handle[] = {&net};
    const double out_dim = static_cast<double>(targets.rows());
    BatchLoss loss = [&](const std::vector<std::size_t>& batch, std::vector<Gradients>& grads, Rng&) {
        const auto b = static_cast<Eigen::Index>(batch.size());
        MatrixXd x(inputs.rows(), b), y(targets.rows(), b);
        for (Eigen::Index i = 0; i < b; ++i) {
            x.col(i) = inputs.col(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]));
            y.col(i) = targets.col(static_cast<Eigen::Index>(batch[static_cast<std::size_t>(i)]));
        }
        const ForwardCache cache = forward_cached(net, x);
        const MatrixXd diff = cache.output - y;
        const double scale = 1.0 / (static_cast<double>(b) * out_dim);
        grads[0] = backward(net, cache, 2.0 * scale * diff);
        return diff.squaredNorm() / (static_cast<double>(b) * out_dim);
    };
    return fit(handle, static_cast<std::size_t>(inputs.cols()), loss, cfg);
}

// ---------------------------------------------------------------------------
// Binary format: u32 layer count L, u32 widths[L+1], u8 activation codes[L],
// then per layer the weight matrix row-major and the bias, as f64. All
// little-endian.

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ostream& os, double d) {
    std::uint64_t v;
    static_assert(sizeof v == sizeof d);
    std::memcpy(&v, &d, sizeof d);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("network file truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("network file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &v, sizeof d);
    return d;
}

}  // namespace detail

inline void write_net(std::ostream& os, const DenseNet& net) {
    const auto sizes = net.sizes();
    detail::put_u32(os, static_cast<std::uint32_t>(net.layer_count()));
    for (int s : sizes) detail::put_u32(os, static_cast<std::uint32_t>(s));
    for (const auto& l : net.layers()) {
        const auto code = static_cast<char>(l.activation);
        os.write(&code, 1);
    }
    const VectorXd p = net.flatten();
    for (Eigen::Index i = 0; i < p.size(); ++i) detail::put_f64(os, p[i]);
}

inline DenseNet read_net(std::istream& is) {
    const std::uint32_t n = detail::get_u32(is);
    if (n == 0 || n > 64) throw std::runtime_error("network file: implausible layer count " + std::to_string(n));
    std::vector<int> sizes;
    for (std::uint32_t i = 0; i <= n; ++i) sizes.push_back(static_cast<int>(detail::get_u32(is)));
    std::vector<Activation> acts;
    for (std::uint32_t i = 0; i < n; ++i) {
        char c;
        if (!is.read(&c, 1)) throw std::runtime_error("network file truncated");
        if (static_cast<unsigned char>(c) > 2) throw std::runtime_error("network file: unknown activation code");
        acts.push_back(static_cast<Activation>(c));
    }
    DenseNet net(sizes, acts);
    VectorXd p(static_cast<Eigen::Index>(net.parameter_count()));
    for (Eigen::Index i = 0; i < p.size(); ++i) p[i] = detail::get_f64(is);
    net.unflatten(p);
    return net;
}

inline void save_net(const std::string& path, const DenseNet& net) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path + " for writing");
    write_net(os, net);
}

inline DenseNet load_net(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return read_net(is);
}

}  // namespace exo::nn
