#include "exo/neural.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace exo;
using nn::Activation;

TEST(Neural, IdentityLayerPassesInputThrough) {
    nn::DenseNet net({3, 3}, {Activation::identity});
    net.layers()[0].weight = MatrixXd::Identity(3, 3);
    const VectorXd x = (VectorXd(3) << 0.5, -1.0, 2.0).finished();
    EXPECT_TRUE(nn::forward(net, x).isApprox(x, 1e-15));
}

TEST(Neural, ZeroWeightsGiveActivatedBias) {
    nn::DenseNet net({4, 2}, {Activation::tanh});
    net.layers()[0].bias << 0.3, -2.0;
    const VectorXd y = nn::forward(net, VectorXd::LinSpaced(4, -1.0, 1.0).eval());
    EXPECT_NEAR(y[0], std::tanh(0.3), 1e-15);
    EXPECT_NEAR(y[1], std::tanh(-2.0), 1e-15);

    nn::DenseNet relu({4, 2}, {Activation::relu});
    relu.layers()[0].bias << 0.3, -2.0;
    const VectorXd r = nn::forward(relu, VectorXd::Ones(4).eval());
    EXPECT_DOUBLE_EQ(r[0], 0.3);
    EXPECT_DOUBLE_EQ(r[1], 0.0);
}

TEST(Neural, SmallNetMatchesHandComputation) {
    const auto net = nn::DenseNet::initialized({2, 3, 1}, {Activation::tanh, Activation::identity}, 11);
    const VectorXd x = (VectorXd(2) << 0.7, -0.2).finished();
    const auto& l0 = net.layers()[0];
    const auto& l1 = net.layers()[1];
    double out = l1.bias[0];
    for (int j = 0; j < 3; ++j) {
        double a = l0.bias[j];
        for (int i = 0; i < 2; ++i) a += l0.weight(j, i) * x[i];
        out += l1.weight(0, j) * std::tanh(a);
    }
    EXPECT_NEAR(nn::forward(net, x)[0], out, 1e-14);
}

TEST(Neural, BatchForwardEqualsColumnwise) {
    const auto net = nn::DenseNet::initialized({3, 5, 2}, {Activation::relu, Activation::tanh}, 4);
    const MatrixXd X = MatrixXd::Random(3, 7);
    const MatrixXd Y = nn::forward(net, X);
    for (int c = 0; c < 7; ++c) EXPECT_TRUE(Y.col(c).isApprox(nn::forward(net, VectorXd(X.col(c))), 1e-14));
}

// Parameter and input gradients of L = sum(c .* out) against central differences.
TEST(Neural, BackwardMatchesFiniteDifferences) {
    auto net = nn::DenseNet::initialized({4, 8, 4}, {Activation::tanh, Activation::identity}, 3);
    Rng rng(9);
    MatrixXd X(4, 5), C(4, 5);
    for (Eigen::Index k = 0; k < X.size(); ++k) {
        X(k) = rng.normal();
        C(k) = rng.normal();
    }
    const auto cache = nn::forward_cached(net, X);
    const auto g = nn::backward(net, cache, C);

    auto loss = [&](const nn::DenseNet& n, const MatrixXd& in) { return (nn::forward(n, in).array() * C.array()).sum(); };
    const VectorXd p = net.flatten();
    VectorXd analytic(p.size());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        for (Eigen::Index i = 0; i < g.weight[l].rows(); ++i)
            for (Eigen::Index j = 0; j < g.weight[l].cols(); ++j) analytic[k++] = g.weight[l](i, j);
        for (Eigen::Index i = 0; i < g.bias[l].size(); ++i) analytic[k++] = g.bias[l][i];
    }
    const double h = 1e-5;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        nn::DenseNet a = net, b = net;
        VectorXd pa = p, pb = p;
        pa[i] += h;
        pb[i] -= h;
        a.unflatten(pa);
        b.unflatten(pb);
        const double fd = (loss(a, X) - loss(b, X)) / (2 * h);
        EXPECT_LT(std::abs(fd - analytic[i]) / std::max({std::abs(fd), std::abs(analytic[i]), 1e-3}), 1e-6) << "param " << i;
    }
    for (Eigen::Index i = 0; i < X.size(); ++i) {
        MatrixXd xa = X, xb = X;
        xa(i) += h;
        xb(i) -= h;
        const double fd = (loss(net, xa) - loss(net, xb)) / (2 * h);
        EXPECT_NEAR(fd, g.input(i), 1e-6);
    }
}

TEST(Neural, LearnsLinearMap) {
    auto net = nn::DenseNet::initialized({1, 1}, {Activation::identity}, 2);
    MatrixXd X(1, 64), Y(1, 64);
    for (int k = 0; k < 64; ++k) {
        X(0, k) = -1.0 + 2.0 * k / 63.0;
        Y(0, k) = 2.0 * X(0, k);
    }
    const auto r = nn::train_mse(net, X, Y, {0.05, 16, 300, 1});
    EXPECT_LT(r.final_loss(), r.initial_loss());
    EXPECT_NEAR(net.layers()[0].weight(0, 0), 2.0, 1e-3);
    EXPECT_NEAR(net.layers()[0].bias[0], 0.0, 1e-3);
}

TEST(Neural, TrainingIsDeterministic) {
    auto make = [] {
        auto net = nn::DenseNet::initialized({2, 6, 1}, {Activation::tanh, Activation::identity}, 5);
        Rng rng(3);
        MatrixXd X(2, 40);
        for (Eigen::Index k = 0; k < X.size(); ++k) X(k) = rng.uniform(-1.0, 1.0);
        const MatrixXd Y = (X.row(0).array() * X.row(1).array()).matrix();
        nn::train_mse(net, X, Y, {1e-2, 8, 20, 7});
        return net.flatten();
    };
    EXPECT_EQ(make(), make());
}

TEST(Neural, SerializationRoundTripIsExact) {
    const auto net = nn::DenseNet::initialized({3, 4, 2}, {Activation::relu, Activation::tanh}, 8);
    std::stringstream ss;
    nn::write_net(ss, net);
    const auto back = nn::read_net(ss);
    EXPECT_EQ(back.sizes(), net.sizes());
    EXPECT_EQ(back.flatten(), net.flatten());
    for (std::size_t l = 0; l < net.layer_count(); ++l) EXPECT_EQ(back.layers()[l].activation, net.layers()[l].activation);
}

TEST(Neural, RejectsMismatchedShapes) {
    EXPECT_THROW(nn::DenseNet({3}, {}), std::invalid_argument);
    EXPECT_THROW(nn::DenseNet({3, 2}, {Activation::tanh, Activation::tanh}), std::invalid_argument);
    auto net = nn::DenseNet::initialized({3, 2}, {Activation::tanh}, 1);
    EXPECT_THROW(net.unflatten(VectorXd::Zero(3)), std::invalid_argument);
}
