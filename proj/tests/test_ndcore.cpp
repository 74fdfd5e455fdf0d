#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <sstream>

#include "driftforge/ndcore.hpp"
#include "test_support.hpp"

using namespace driftforge;
using namespace driftforge::ndcore;

TEST_CASE("forward: zero-weight softmax2 net outputs (0.5, 0.5)") {
    Rng rng(1);
    DenseNet net = make_dense_net({4, 3, 2}, OutputHead::kSoftmax2, rng);
    for (auto& w : net.weights) w.setZero();
    Eigen::VectorXd x(4);
    x << 0.3, -1.2, 4.0, 0.0;
    auto [hidden, out] = forward(net, x);
    CHECK(out(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out(1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(hidden.size() == 1);
}

TEST_CASE("forward: one-layer linear net computes affine map") {
    DenseNet net;
    net.layer_dims = {1, 1};
    net.weights.push_back(Eigen::MatrixXd::Constant(1, 1, 2.0));
    net.biases.push_back(Eigen::VectorXd::Constant(1, 1.0));
    Eigen::VectorXd x(1);
    x << 3.0;
    auto [hidden, out] = forward(net, x);
    CHECK(out(0) == doctest::Approx(7.0));
    CHECK(hidden.empty());
}

TEST_CASE("forward: matches straight-line oracle on random 3-layer nets") {
    Rng rng(42);
    for (int trial = 0; trial < 20; ++trial) {
        const auto head = trial % 2 == 0 ? OutputHead::kLinear : OutputHead::kSoftmax2;
        std::vector<int> dims = {5, 7, 4, head == OutputHead::kSoftmax2 ? 2 : 3};
        DenseNet net = make_dense_net(dims, head, rng);
        Eigen::VectorXd x(5);
        for (int i = 0; i < 5; ++i) x(i) = rng.uniform(-2.0, 2.0);
        auto [hidden, out] = forward(net, x);
        Eigen::VectorXd ref = testsup::naive_forward(net, x);
        for (Eigen::Index i = 0; i < out.size(); ++i) {
            CHECK(std::abs(out(i) - ref(i)) < 1e-12);
        }
    }
}

TEST_CASE("forward: input dimension mismatch throws") {
    Rng rng(3);
    DenseNet net = make_dense_net({4, 2}, OutputHead::kLinear, rng);
    Eigen::VectorXd x(3);
    x.setZero();
    CHECK_THROWS_AS(forward(net, x), UsageError);
}

TEST_CASE("softmax2 outputs sum to 1 within 1e-9") {
    Rng rng(7);
    DenseNet net = make_dense_net({6, 5, 2}, OutputHead::kSoftmax2, rng);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXd x(6);
        for (int i = 0; i < 6; ++i) x(i) = rng.uniform(-50.0, 50.0);
        auto [hidden, out] = forward(net, x);
        CHECK(out(0) >= 0.0);
        CHECK(out(1) >= 0.0);
        CHECK(std::abs(out(0) + out(1) - 1.0) < 1e-9);
    }
}

TEST_CASE("backward: scalar chain rule") {
    DenseNet net;
    net.layer_dims = {1, 1};
    net.weights.push_back(Eigen::MatrixXd::Constant(1, 1, 5.0));
    net.biases.push_back(Eigen::VectorXd::Zero(1));
    Eigen::MatrixXd x(1, 1);
    x << 2.0;
    auto trace = forward_batch(net, x);
    NetGrad g = NetGrad::zeros_like(net);
    Eigen::MatrixXd dout(1, 1);
    dout << 1.0;
    Eigen::MatrixXd dx = backward_batch(net, trace, dout, g);
    CHECK(g.dw[0](0, 0) == doctest::Approx(2.0));
    CHECK(g.db[0](0) == doctest::Approx(1.0));
    CHECK(dx(0, 0) == doctest::Approx(5.0));
}

TEST_CASE("backward: zero output gradient gives zero parameter gradients") {
    Rng rng(11);
    DenseNet net = make_dense_net({3, 4, 2}, OutputHead::kSoftmax2, rng);
    Eigen::MatrixXd x(3, 5);
    for (Eigen::Index i = 0; i < x.size(); ++i) *(x.data() + i) = rng.uniform(-1.0, 1.0);
    auto trace = forward_batch(net, x);
    NetGrad g = NetGrad::zeros_like(net);
    backward_batch(net, trace, Eigen::MatrixXd::Zero(2, 5), g);
    for (const auto& w : g.dw) CHECK(w.cwiseAbs().maxCoeff() == 0.0);
    for (const auto& b : g.db) CHECK(b.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("backward: missing cached state is rejected") {
    Rng rng(12);
    DenseNet net = make_dense_net({3, 4, 2}, OutputHead::kLinear, rng);
    ForwardTrace empty;
    empty.input = Eigen::MatrixXd::Zero(3, 1);
    NetGrad g = NetGrad::zeros_like(net);
    CHECK_THROWS_AS(backward_batch(net, empty, Eigen::MatrixXd::Zero(2, 1), g), UsageError);
}

// Gradient correctness across random small nets: analytic vs central finite
// differences of a random linear functional of the outputs.
TEST_CASE("backward: finite-difference agreement on 100 random small nets") {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const bool softmax = rng.bernoulli(0.5);
        const int in = 2 + rng.index(4);
        const int hid = 2 + rng.index(6);
        const int out_dim = softmax ? 2 : 1 + rng.index(4);
        DenseNet net = make_dense_net({in, hid, out_dim},
                                      softmax ? OutputHead::kSoftmax2 : OutputHead::kLinear, rng);
        const int batch = 1 + rng.index(4);
        Eigen::MatrixXd x(in, batch);
        for (Eigen::Index i = 0; i < x.size(); ++i) *(x.data() + i) = rng.uniform(-1.5, 1.5);
        Eigen::MatrixXd c(out_dim, batch);
        for (Eigen::Index i = 0; i < c.size(); ++i) *(c.data() + i) = rng.uniform(-1.0, 1.0);

        auto loss = [&]() {
            auto t = forward_batch(net, x);
            return (t.output().array() * c.array()).sum();
        };
        auto trace = forward_batch(net, x);
        NetGrad g = NetGrad::zeros_like(net);
        backward_batch(net, trace, c, g);

        std::vector<double*> params;
        testsup::collect_net_params(net, params);
        std::vector<double> analytic;
        testsup::collect_net_grads(g, analytic);
        auto rep = testsup::fd_check(params, analytic, loss);
        CHECK_MESSAGE(rep.failures == 0, "trial ", trial, ": ", rep.detail);
    }
}

TEST_CASE("optimizer: sgd basic step") {
    DenseNet net;
    net.layer_dims = {1, 1};
    net.weights.push_back(Eigen::MatrixXd::Constant(1, 1, 1.0));
    net.biases.push_back(Eigen::VectorXd::Zero(1));
    OptimizerState st = make_optimizer(OptKind::kSgd, 0.1, net);
    NetGrad g = NetGrad::zeros_like(net);
    g.dw[0](0, 0) = 2.0;
    optimizer_step(st, net, g);
    CHECK(net.weights[0](0, 0) == doctest::Approx(0.8));
}

TEST_CASE("optimizer: sgd with zero gradient leaves parameters unchanged") {
    Rng rng(5);
    DenseNet net = make_dense_net({3, 3, 2}, OutputHead::kLinear, rng);
    DenseNet before = net;
    OptimizerState st = make_optimizer(OptKind::kSgd, 0.5, net);
    optimizer_step(st, net, NetGrad::zeros_like(net));
    for (std::size_t l = 0; l < net.num_layers(); ++l) {
        CHECK((net.weights[l] - before.weights[l]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("optimizer: first adam step matches hand computation") {
    // p=0, g=1, lr=0.001: m=0.1, v=0.001, mhat=1, vhat=1,
    // p' = -0.001 * 1 / (sqrt(1) + 1e-8)
    DenseNet net;
    net.layer_dims = {1, 1};
    net.weights.push_back(Eigen::MatrixXd::Zero(1, 1));
    net.biases.push_back(Eigen::VectorXd::Zero(1));
    OptimizerState st = make_optimizer(OptKind::kAdam, 0.001, net);
    NetGrad g = NetGrad::zeros_like(net);
    g.dw[0](0, 0) = 1.0;
    optimizer_step(st, net, g);
    const double expected = -0.001 * 1.0 / (1.0 + 1e-8);
    CHECK(net.weights[0](0, 0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(st.step_count == 1);
}

TEST_CASE("optimizer: shape mismatch rejected") {
    Rng rng(6);
    DenseNet net = make_dense_net({3, 2}, OutputHead::kLinear, rng);
    DenseNet other = make_dense_net({4, 2}, OutputHead::kLinear, rng);
    OptimizerState st = make_optimizer(OptKind::kSgd, 0.1, net);
    CHECK_THROWS_AS(optimizer_step(st, net, NetGrad::zeros_like(other)), UsageError);
}

TEST_CASE("lr_at: step decay and cosine") {
    LrSchedule stepd = step_decay_lr(0.005, 0.95, 10);
    CHECK(lr_at(stepd, 0) == doctest::Approx(0.005));
    CHECK(lr_at(stepd, 9) == doctest::Approx(0.005));
    CHECK(lr_at(stepd, 10) == doctest::Approx(0.00475));

    LrSchedule cos = cosine_lr(1.0, 100);
    CHECK(lr_at(cos, 0) == doctest::Approx(1.0));
    CHECK(lr_at(cos, 50) == doctest::Approx(0.5));
    CHECK(lr_at(cos, 99) > 0.0);
    CHECK_THROWS_AS(lr_at(cos, 100), UsageError);

    LrSchedule c = constant_lr(0.3);
    CHECK(lr_at(c, 12345) == doctest::Approx(0.3));
}

TEST_CASE("initialization is deterministic under a fixed seed") {
    Rng a(99), b(99);
    DenseNet n1 = make_dense_net({8, 6, 4}, OutputHead::kLinear, a);
    DenseNet n2 = make_dense_net({8, 6, 4}, OutputHead::kLinear, b);
    for (std::size_t l = 0; l < n1.num_layers(); ++l) {
        CHECK((n1.weights[l] - n2.weights[l]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("deterministic parameter trajectory under identical seeds") {
    auto run = [](std::uint64_t seed) {
        Rng rng(seed);
        DenseNet net = make_dense_net({4, 5, 2}, OutputHead::kSoftmax2, rng);
        OptimizerState st = make_optimizer(OptKind::kAdam, 0.01, net);
        for (int step = 0; step < 25; ++step) {
            Eigen::MatrixXd x(4, 3);
            for (Eigen::Index i = 0; i < x.size(); ++i) *(x.data() + i) = rng.uniform(-1.0, 1.0);
            auto trace = forward_batch(net, x);
            NetGrad g = NetGrad::zeros_like(net);
            Eigen::MatrixXd dout = Eigen::MatrixXd::Ones(2, 3);
            backward_batch(net, trace, dout, g);
            optimizer_step(st, net, g);
        }
        return net;
    };
    DenseNet r1 = run(77), r2 = run(77);
    for (std::size_t l = 0; l < r1.num_layers(); ++l) {
        CHECK((r1.weights[l] - r2.weights[l]).cwiseAbs().maxCoeff() == 0.0);
        CHECK((r1.biases[l] - r2.biases[l]).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("checkpoint: save/load round trip is bit-exact") {
    Rng rng(31337);
    DenseNet net = make_dense_net({9, 7, 5, 2}, OutputHead::kSoftmax2, rng);
    std::stringstream ss(std::ios::in | std::ios::out | std::ios::binary);
    save_net(net, OptKind::kAdam, ss);
    const std::string first = ss.str();

    std::stringstream in(first, std::ios::in | std::ios::binary);
    auto [loaded, opt] = load_net(in);
    CHECK(opt == OptKind::kAdam);
    CHECK(loaded.head == OutputHead::kSoftmax2);
    CHECK(loaded.layer_dims == net.layer_dims);

    std::stringstream again(std::ios::in | std::ios::out | std::ios::binary);
    save_net(loaded, opt, again);
    CHECK(again.str() == first);
}

TEST_CASE("checkpoint: bad magic rejected") {
    std::stringstream ss(std::string("NOTANET!"), std::ios::in | std::ios::binary);
    CHECK_THROWS_AS(load_net(ss), DataError);
}
