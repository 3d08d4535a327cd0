#include <doctest.h>

#include <cmath>

#include "prop/error.hpp"
#include "prop/modnet.hpp"

using namespace prop;

namespace {

DenseNet small_base(std::uint64_t seed) {
    LayerSpec spec{{3, 4, 4, 2}, {Activation::Tanh, Activation::Tanh, Activation::Identity}};
    DenseNet net = init_params(spec, seed);
    Rng rng(seed ^ 0x5eedull);
    for (auto& l : net.layers)
        for (auto& b : l.bias) b = rng.uniform(-0.3, 0.3);
    return net;
}

} // namespace

TEST_CASE("attach: shapes, frozen reference, disjoint encoders") {
    DenseNet base = small_base(1);
    PropPolicy policy = attach(base, {1, 2}, {8}, 16, 7);
    REQUIRE(policy.encoders.size() == 2);
    // Encoder output width equals the modulated layer's input width.
    CHECK(policy.encoders.at(1).net.output_dim() == base.layers[1].weight.cols);
    CHECK(policy.encoders.at(2).net.output_dim() == base.layers[2].weight.cols);
    CHECK(policy.encoders.at(1).net.input_dim() == 16);
    // Base copied unchanged, reference frozen.
    CHECK(policy.base.flatten_params() == base.flatten_params());
    REQUIRE(policy.frozen_reference.has_value());
    CHECK(policy.frozen_reference->flatten_params() == base.flatten_params());
    // Independent encoders: parameters differ.
    CHECK(policy.encoders.at(1).net.flatten_params() != policy.encoders.at(2).net.flatten_params());
    // Final encoder activation is tanh, so deltas stay in (-1, 1).
    CHECK(policy.encoders.at(1).net.layers.back().act == Activation::Tanh);
}

TEST_CASE("attach: invalid layer index throws") {
    DenseNet base = small_base(2);
    CHECK_THROWS_AS(attach(base, {0}, {8}, 16, 7), Error);
    CHECK_THROWS_AS(attach(base, {3}, {8}, 16, 7), Error);
}

TEST_CASE("modulated_forward: null key is bitwise identical to the base") {
    DenseNet base = small_base(3);
    PropPolicy policy = attach(base, {1}, {8}, 16, 9);
    Rng rng(30);
    for (int i = 0; i < 100; ++i) {
        Vector x = {rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2)};
        Vector base_out = forward(base, x).first;
        auto [mod_out, cache] = modulated_forward(policy, x, Key::null());
        CHECK(mod_out == base_out); // exact, not approximate
        CHECK(cache.null_key);
        CHECK(cache.encoder_caches.empty());
    }
}

TEST_CASE("modulated_forward: hand-computed delta = (0.5, ...) modulation") {
    // 2-layer base; modulate layer 1. Encoder forced to emit exactly 0.5 per
    // component: zero weights, bias = atanh(0.5).
    LayerSpec base_spec{{2, 2, 1}, {Activation::Identity, Activation::Tanh}};
    DenseNet base = init_params(base_spec, 4);
    Rng rng(31);
    for (auto& l : base.layers) {
        for (auto& w : l.weight.a) w = rng.uniform(-1, 1);
        for (auto& b : l.bias) b = rng.uniform(-1, 1);
    }
    PropPolicy policy = attach(base, {1}, {4}, 8, 5);
    DenseNet& enc = policy.encoders.at(1).net;
    for (auto& l : enc.layers) {
        for (auto& w : l.weight.a) w = 0.0;
        for (auto& b : l.bias) b = 0.0;
    }
    for (auto& b : enc.layers.back().bias) b = std::atanh(0.5);

    Key k = Key::from_passphrase("any", 8);
    Vector x = {0.7, -0.4};
    auto [y, cache] = modulated_forward(policy, x, k);

    // Manual arithmetic: z1 = W0 x + b0 (identity), y = tanh(W1 (0.5*z1) + b1).
    const auto& l0 = base.layers[0];
    const auto& l1 = base.layers[1];
    Vector z1(2);
    for (int r = 0; r < 2; ++r)
        z1[r] = l0.bias[r] + l0.weight(r, 0) * x[0] + l0.weight(r, 1) * x[1];
    double pre = l1.bias[0] + l1.weight(0, 0) * 0.5 * z1[0] + l1.weight(0, 1) * 0.5 * z1[1];
    double expect = std::tanh(pre);
    CHECK(y[0] == doctest::Approx(expect).epsilon(1e-12));
    CHECK(cache.deltas.at(1)[0] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("modulated_forward: different keys give different outputs") {
    DenseNet base = small_base(6);
    PropPolicy policy = attach(base, {1}, {8}, 16, 11);
    Rng rng(32);
    Key a = Key::random(16, rng);
    Key b = Key::random(16, rng);
    Vector x = {0.5, -0.5, 0.25};
    Vector ya = modulated_forward(policy, x, a).first;
    Vector yb = modulated_forward(policy, x, b).first;
    CHECK(ya != yb);
}

TEST_CASE("modulated_backward: null key leaves encoder gradients zero") {
    DenseNet base = small_base(7);
    PropPolicy policy = attach(base, {1}, {8}, 16, 12);
    Vector x = {0.2, 0.1, -0.6};
    auto [y, cache] = modulated_forward(policy, x, Key::null());
    auto res = modulated_backward(policy, cache, Vector{1.0, -1.0});
    for (const auto& [idx, tape] : res.encoder_tapes) {
        (void)idx;
        for (double g : tape.flatten()) CHECK(g == 0.0);
    }
    // Base gradients match the plain-network backward exactly.
    auto [yb, bcache] = forward(base, x);
    auto plain = backward(base, bcache, Vector{1.0, -1.0});
    CHECK(res.base_tape.flatten() == plain.tape.flatten());
}

TEST_CASE("modulated_backward: joint finite differences over base and encoders") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        DenseNet base = small_base(seed ^ 0x40ull);
        PropPolicy policy = attach(base, {1, 2}, {6}, 8, seed ^ 0x41ull);
        Rng rng(seed ^ 0x42ull);
        Key k = Key::random(8, rng);
        Vector x = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vector t = {rng.uniform(-1, 1), rng.uniform(-1, 1)};

        auto [y, cache] = modulated_forward(policy, x, k);
        auto res = modulated_backward(policy, cache, loss_mse(y, t).grad);

        // Assemble the analytic flat gradient (base first, encoders ascending).
        Vector analytic = res.base_tape.flatten();
        for (const auto& [idx, tape] : res.encoder_tapes) {
            (void)idx;
            Vector part = tape.flatten();
            analytic.insert(analytic.end(), part.begin(), part.end());
        }

        Vector flat = policy.flatten_params();
        Vector numeric(flat.size());
        const double h = 1e-5;
        PropPolicy probe = policy;
        for (std::size_t i = 0; i < flat.size(); ++i) {
            Vector fp = flat;
            fp[i] += h;
            probe.unflatten_params(fp);
            double up = loss_mse(modulated_forward(probe, x, k).first, t).value;
            fp[i] -= 2 * h;
            probe.unflatten_params(fp);
            double dn = loss_mse(modulated_forward(probe, x, k).first, t).value;
            numeric[i] = (up - dn) / (2 * h);
        }
        worst = std::max(worst, max_rel_error(analytic, numeric));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("modulated_backward: frozen base still yields encoder gradients") {
    DenseNet base = small_base(8);
    PropPolicy policy = attach(base, {1}, {8}, 16, 13);
    Rng rng(33);
    Key k = Key::random(16, rng);
    Vector x = {0.4, -0.2, 0.9};
    auto [y, cache] = modulated_forward(policy, x, k);
    auto res = modulated_backward(policy, cache, Vector{1.0, 0.5});
    res.base_tape.zero(); // freezing the base is just discarding its grads
    double mag = 0.0;
    for (double g : res.encoder_tapes.at(1).flatten()) mag += std::abs(g);
    CHECK(mag > 0.0);
}

TEST_CASE("behavioral_distance") {
    DenseNet base = small_base(9);
    PropPolicy policy = attach(base, {1}, {8}, 16, 14);
    std::vector<Vector> probes = {{0.1, 0.2, 0.3}, {-0.5, 0.0, 0.5}};
    CHECK(behavioral_distance(policy, base, probes, Key::null()) == 0.0);
    Rng rng(34);
    Key k = Key::random(16, rng);
    CHECK(behavioral_distance(policy, base, probes, k) > 0.0);
    CHECK_THROWS_AS(behavioral_distance(policy, base, {}, k), Error);
}

TEST_CASE("policy flatten/unflatten round-trip") {
    DenseNet base = small_base(10);
    PropPolicy policy = attach(base, {1, 2}, {8}, 16, 15);
    Vector flat = policy.flatten_params();
    CHECK(flat.size() == policy.param_count());
    PropPolicy other = attach(small_base(11), {1, 2}, {8}, 16, 16);
    other.unflatten_params(flat);
    Rng rng(35);
    Key k = Key::random(16, rng);
    Vector x = {0.3, 0.3, -0.3};
    CHECK(modulated_forward(other, x, k).first == modulated_forward(policy, x, k).first);
}
