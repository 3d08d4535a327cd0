#include <doctest.h>

#include <cmath>

#include "prop/error.hpp"
#include "prop/net.hpp"
#include "prop/rng.hpp"

using namespace prop;

namespace {

// Independent straight-line evaluator used as an oracle for forward().
Vector straight_line_eval(const DenseNet& net, Vector z) {
    for (const auto& layer : net.layers) {
        Vector pre(layer.weight.rows, 0.0);
        for (int r = 0; r < layer.weight.rows; ++r) {
            double acc = layer.bias[r];
            for (int c = 0; c < layer.weight.cols; ++c) acc += layer.weight(r, c) * z[c];
            pre[r] = acc;
        }
        Vector post(pre.size());
        switch (layer.act) {
            case Activation::Identity:
                post = pre;
                break;
            case Activation::Tanh:
                for (std::size_t i = 0; i < pre.size(); ++i) post[i] = std::tanh(pre[i]);
                break;
            case Activation::Relu:
                for (std::size_t i = 0; i < pre.size(); ++i) post[i] = pre[i] > 0 ? pre[i] : 0.0;
                break;
            case Activation::Softmax: {
                double mx = pre[0];
                for (double v : pre) mx = std::max(mx, v);
                double sum = 0.0;
                for (std::size_t i = 0; i < pre.size(); ++i) {
                    post[i] = std::exp(pre[i] - mx);
                    sum += post[i];
                }
                for (auto& v : post) v /= sum;
                break;
            }
        }
        z = post;
    }
    return z;
}

DenseNet random_net(const LayerSpec& spec, std::uint64_t seed) {
    DenseNet net = init_params(spec, seed);
    Rng rng(seed ^ 0xb1a5ull);
    for (auto& l : net.layers)
        for (auto& b : l.bias) b = rng.uniform(-0.5, 0.5);
    return net;
}

} // namespace

TEST_CASE("forward: identity single layer") {
    DenseNet net;
    Layer l;
    l.weight = Matrix::identity(2);
    l.bias = {0.0, 0.0};
    l.act = Activation::Identity;
    net.layers.push_back(l);
    auto [y, cache] = forward(net, {3.0, -1.0});
    CHECK(y[0] == 3.0);
    CHECK(y[1] == -1.0);
}

TEST_CASE("forward: tanh analytic single layer") {
    DenseNet net;
    Layer l;
    l.weight = Matrix(1, 2);
    l.weight(0, 0) = 1.0;
    l.weight(0, 1) = 1.0;
    l.bias = {0.5};
    l.act = Activation::Tanh;
    net.layers.push_back(l);
    auto [y, cache] = forward(net, {0.0, 0.0});
    CHECK(y[0] == doctest::Approx(std::tanh(0.5)).epsilon(1e-15));
}

TEST_CASE("forward: matches independent straight-line evaluator") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        LayerSpec spec{{3, 5, 4, 2}, {Activation::Tanh, Activation::Relu, Activation::Identity}};
        DenseNet net = random_net(spec, seed);
        Rng rng(seed ^ 0xf00dull);
        Vector x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        auto [y, cache] = forward(net, x);
        Vector expect = straight_line_eval(net, x);
        for (std::size_t i = 0; i < y.size(); ++i)
            CHECK(std::abs(y[i] - expect[i]) < 1e-12);
    }
}

TEST_CASE("forward: softmax output matches oracle, sums to one") {
    LayerSpec spec{{4, 6, 3}, {Activation::Tanh, Activation::Softmax}};
    DenseNet net = random_net(spec, 99);
    Vector x = {0.3, -0.2, 0.9, -1.1};
    auto [y, cache] = forward(net, x);
    Vector expect = straight_line_eval(net, x);
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(std::abs(y[i] - expect[i]) < 1e-12);
        CHECK(y[i] >= 0.0);
        sum += y[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("forward: dimension mismatch names the layer") {
    LayerSpec spec{{3, 2}, {Activation::Identity}};
    DenseNet net = init_params(spec, 1);
    CHECK_THROWS_AS(forward(net, {1.0, 2.0}), Error);
    try {
        forward(net, {1.0, 2.0});
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
}

TEST_CASE("backward: scalar net y = w*x") {
    DenseNet net;
    Layer l;
    l.weight = Matrix(1, 1);
    l.weight(0, 0) = 5.0;
    l.bias = {0.0};
    l.act = Activation::Identity;
    net.layers.push_back(l);
    auto [y, cache] = forward(net, {2.0});
    auto res = backward(net, cache, {1.0});
    CHECK(res.tape.d_weight[0](0, 0) == 2.0);
    CHECK(res.tape.d_bias[0][0] == 1.0);
    CHECK(res.d_input[0] == 5.0);
}

TEST_CASE("backward: identity linear layer dW is outer product") {
    DenseNet net;
    Layer l;
    l.weight = Matrix(2, 3);
    l.bias = {0.0, 0.0};
    l.act = Activation::Identity;
    Rng rng(4);
    for (auto& w : l.weight.a) w = rng.uniform(-1, 1);
    net.layers.push_back(l);
    Vector x = {0.5, -1.0, 2.0};
    Vector up = {1.5, -0.5};
    auto [y, cache] = forward(net, x);
    auto res = backward(net, cache, up);
    for (int r = 0; r < 2; ++r)
        for (int c = 0; c < 3; ++c)
            CHECK(res.tape.d_weight[r == 0 ? 0 : 0](r, c) == doctest::Approx(up[r] * x[c]));
}

TEST_CASE("backward: finite differences over 100 random nets") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        int in = 2 + static_cast<int>(rng.integer(3));
        int hid = 2 + static_cast<int>(rng.integer(4));
        int out = 1 + static_cast<int>(rng.integer(3));
        Activation mid = seed % 3 == 0   ? Activation::Identity
                         : seed % 3 == 1 ? Activation::Tanh
                                         : Activation::Relu;
        LayerSpec spec{{in, hid, out}, {mid, Activation::Tanh}};
        DenseNet net = random_net(spec, seed ^ 0x77ull);
        Vector x(in), target(out);
        for (auto& v : x) v = rng.uniform(-1, 1);
        for (auto& v : target) v = rng.uniform(-1, 1);

        auto [y, cache] = forward(net, x);
        LossValue lv = loss_mse(y, target);
        auto res = backward(net, cache, lv.grad);
        auto loss_fn = [&](const DenseNet& n) {
            return loss_mse(forward(n, x).first, target).value;
        };
        double err = finite_diff_check(net, loss_fn, res.tape.flatten());
        worst = std::max(worst, err);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("backward: fused softmax cross-entropy logit gradient") {
    LayerSpec spec{{3, 5, 4}, {Activation::Tanh, Activation::Softmax}};
    DenseNet net = random_net(spec, 17);
    Vector x = {0.2, -0.8, 0.4};
    int label = 2;
    auto [probs, cache] = forward(net, x);
    // loss_xent consumes logits, which are the cached pre-activations.
    LossValue lv = loss_xent(cache.pre.back(), label);
    auto res = backward(net, cache, lv.grad, /*upstream_is_logit_grad=*/true);
    auto loss_fn = [&](const DenseNet& n) {
        auto [p, c] = forward(n, x);
        return loss_xent(c.pre.back(), label).value;
    };
    CHECK(finite_diff_check(net, loss_fn, res.tape.flatten()) < 1e-4);
}

TEST_CASE("loss_mse examples") {
    CHECK(loss_mse({1.0, 2.0}, {1.0, 2.0}).value == 0.0);
    // Direct formula oracle: mean of squared differences.
    Vector p = {0.5, -1.5, 2.0};
    Vector t = {1.0, 0.0, -0.5};
    double direct = ((0.5 * 0.5) + (1.5 * 1.5) + (2.5 * 2.5)) / 3.0;
    LossValue lv = loss_mse(p, t);
    CHECK(lv.value == doctest::Approx(direct).epsilon(1e-15));
    for (int i = 0; i < 3; ++i)
        CHECK(lv.grad[i] == doctest::Approx(2.0 * (p[i] - t[i]) / 3.0).epsilon(1e-15));
}

TEST_CASE("loss_xent: uniform logits give ln 10") {
    Vector logits(10, 0.7);
    CHECK(loss_xent(logits, 3).value == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("loss_xent: random case matches direct formula") {
    Rng rng(12);
    Vector logits(6);
    for (auto& v : logits) v = rng.uniform(-3, 3);
    int label = 4;
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - mx);
    double direct = -(logits[label] - mx - std::log(lse));
    CHECK(loss_xent(logits, label).value == doctest::Approx(direct).epsilon(1e-12));
    // Gradient is softmax - onehot.
    Vector p = softmax(logits);
    LossValue lv = loss_xent(logits, label);
    for (int i = 0; i < 6; ++i)
        CHECK(lv.grad[i] == doctest::Approx(p[i] - (i == label ? 1.0 : 0.0)).epsilon(1e-12));
}

TEST_CASE("loss_xent: label out of range throws") {
    CHECK_THROWS_AS(loss_xent({0.0, 1.0}, 2), Error);
    CHECK_THROWS_AS(loss_xent({0.0, 1.0}, -1), Error);
}

TEST_CASE("loss_xent_dist: uniform target optimum is ln 10 at uniform logits") {
    Vector logits(10, 0.0);
    Vector uniform(10, 0.1);
    CHECK(loss_xent_dist(logits, uniform).value == doctest::Approx(std::log(10.0)).epsilon(1e-12));
}

TEST_CASE("step: sgd example and zero-gradient identity") {
    DenseNet net;
    Layer l;
    l.weight = Matrix(1, 1);
    l.weight(0, 0) = 1.0;
    l.bias = {0.0};
    net.layers.push_back(l);
    GradTape tape = make_tape(net);
    tape.d_weight[0](0, 0) = 2.0;
    Optimizer opt = Optimizer::sgd(0.1);
    step(opt, net, tape);
    CHECK(net.layers[0].weight(0, 0) == doctest::Approx(0.8).epsilon(1e-15));

    DenseNet before = net;
    tape.zero();
    step(opt, net, tape);
    CHECK(net.layers[0].weight(0, 0) == before.layers[0].weight(0, 0));
    CHECK(net.layers[0].bias[0] == before.layers[0].bias[0]);
}

TEST_CASE("step: 100 sgd steps on (theta-3)^2 converge") {
    DenseNet net;
    Layer l;
    l.weight = Matrix(1, 1);
    l.weight(0, 0) = 0.0;
    l.bias = {0.0};
    net.layers.push_back(l);
    Optimizer opt = Optimizer::sgd(0.1);
    for (int i = 0; i < 100; ++i) {
        GradTape tape = make_tape(net);
        tape.d_weight[0](0, 0) = 2.0 * (net.layers[0].weight(0, 0) - 3.0);
        step(opt, net, tape);
    }
    CHECK(std::abs(net.layers[0].weight(0, 0) - 3.0) < 1e-6);
}

TEST_CASE("step: non-finite gradient names the layer") {
    LayerSpec spec{{2, 3, 1}, {Activation::Tanh, Activation::Identity}};
    DenseNet net = init_params(spec, 3);
    GradTape tape = make_tape(net);
    tape.d_weight[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
    Optimizer opt = Optimizer::sgd(0.1);
    try {
        step(opt, net, tape);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Numeric);
        CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
    }
}

TEST_CASE("adam: single step matches the standard recursion") {
    Vector params = {1.0, -2.0};
    Vector grad = {0.5, 0.25};
    Optimizer opt = Optimizer::adam(0.01);
    step_flat(opt, params, grad);
    for (int i = 0; i < 2; ++i) {
        double m = 0.1 * grad[i];
        double v = 0.001 * grad[i] * grad[i];
        double mh = m / (1 - 0.9);
        double vh = v / (1 - 0.999);
        double expect = (i == 0 ? 1.0 : -2.0) - 0.01 * mh / (std::sqrt(vh) + 1e-8);
        CHECK(params[i] == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("init_params: determinism, zero biases, fan-in bound") {
    LayerSpec spec{{8, 16, 4}, {Activation::Tanh, Activation::Identity}};
    DenseNet a = init_params(spec, 42);
    DenseNet b = init_params(spec, 42);
    CHECK(a.flatten_params() == b.flatten_params());
    DenseNet c = init_params(spec, 43);
    CHECK(a.flatten_params() != c.flatten_params());
    for (const auto& l : a.layers) {
        double bound = std::sqrt(6.0 / l.weight.cols);
        for (double w : l.weight.a) CHECK(std::abs(w) <= bound);
        for (double bias : l.bias) CHECK(bias == 0.0);
    }
}

TEST_CASE("finite_diff_check examples") {
    SUBCASE("linear model + mse") {
        LayerSpec spec{{3, 2}, {Activation::Identity}};
        DenseNet net = random_net(spec, 5);
        Vector x = {0.1, 0.7, -0.4}, t = {1.0, -1.0};
        auto [y, cache] = forward(net, x);
        auto res = backward(net, cache, loss_mse(y, t).grad);
        auto loss_fn = [&](const DenseNet& n) { return loss_mse(forward(n, x).first, t).value; };
        CHECK(finite_diff_check(net, loss_fn, res.tape.flatten()) < 1e-6);
    }
    SUBCASE("tanh two-layer net") {
        LayerSpec spec{{3, 5, 2}, {Activation::Tanh, Activation::Tanh}};
        DenseNet net = random_net(spec, 6);
        Vector x = {0.3, -0.6, 0.2}, t = {0.5, 0.0};
        auto [y, cache] = forward(net, x);
        auto res = backward(net, cache, loss_mse(y, t).grad);
        auto loss_fn = [&](const DenseNet& n) { return loss_mse(forward(n, x).first, t).value; };
        CHECK(finite_diff_check(net, loss_fn, res.tape.flatten()) < 1e-4);
    }
    SUBCASE("zero net with zero target is exactly zero error") {
        LayerSpec spec{{2, 2}, {Activation::Identity}};
        DenseNet net = init_params(spec, 7);
        for (auto& w : net.layers[0].weight.a) w = 0.0;
        Vector x = {0.0, 0.0}, t = {0.0, 0.0};
        auto [y, cache] = forward(net, x);
        auto res = backward(net, cache, loss_mse(y, t).grad);
        auto loss_fn = [&](const DenseNet& n) { return loss_mse(forward(n, x).first, t).value; };
        CHECK(finite_diff_check(net, loss_fn, res.tape.flatten()) == 0.0);
    }
}

TEST_CASE("flatten/unflatten round-trip preserves forward bitwise") {
    LayerSpec spec{{4, 7, 3}, {Activation::Relu, Activation::Identity}};
    DenseNet net = random_net(spec, 21);
    Vector x = {0.1, -0.2, 0.3, -0.4};
    Vector y0 = forward(net, x).first;
    Vector flat = net.flatten_params();
    DenseNet other = init_params(spec, 99);
    other.unflatten_params(flat);
    Vector y1 = forward(other, x).first;
    CHECK(y0 == y1);
}
