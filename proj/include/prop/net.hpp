#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "prop/linalg.hpp"
#include "prop/rng.hpp"

namespace prop {

enum class Activation { Identity, Tanh, Relu, Softmax };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct Layer {
    Matrix weight;
    Vector bias;
    Activation act = Activation::Identity;
};

// Plain stack of affine layers with pointwise activations (softmax allowed
// only at the output).
struct DenseNet {
    std::vector<Layer> layers;

    int input_dim() const { return layers.empty() ? 0 : layers.front().weight.cols; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().weight.rows; }
    std::size_t param_count() const;

    Vector flatten_params() const;
    void unflatten_params(const Vector& flat);
};

// Per-layer activations recorded by forward: inputs[i] is the vector fed to
// layer i, pre[i] the affine result, post[i] the activated output.
struct ForwardCache {
    Vector input;
    std::vector<Vector> inputs;
    std::vector<Vector> pre;
    std::vector<Vector> post;
};

struct GradTape {
    std::vector<Matrix> d_weight;
    std::vector<Vector> d_bias;

    void zero();
    void add(const GradTape& other);
    void scale(double s);
    Vector flatten() const;
    std::size_t param_count() const;
};

GradTape make_tape(const DenseNet& net);

std::pair<Vector, ForwardCache> forward(const DenseNet& net, const Vector& x);

struct BackwardResult {
    GradTape tape;
    Vector d_input;
};

// upstream_is_logit_grad: upstream is the gradient w.r.t. the final layer's
// pre-activation (used with the fused softmax/cross-entropy loss).
BackwardResult backward(const DenseNet& net, const ForwardCache& cache,
                        const Vector& upstream, bool upstream_is_logit_grad = false);

struct LossValue {
    double value = 0.0;
    Vector grad; // w.r.t. prediction (or logits for cross-entropy)
};

LossValue loss_mse(const Vector& pred, const Vector& target);
// Cross-entropy over logits with a hard label; gradient is w.r.t. logits.
LossValue loss_xent(const Vector& logits, int label);
// Cross-entropy over logits against a target distribution.
LossValue loss_xent_dist(const Vector& logits, const Vector& target_probs);

Vector softmax(const Vector& logits);

enum class OptimizerKind { Sgd, Adam };

struct Optimizer {
    OptimizerKind kind = OptimizerKind::Sgd;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    std::int64_t t = 0;
    Vector m; // first moment, flat
    Vector v; // second moment, flat

    static Optimizer sgd(double lr);
    static Optimizer adam(double lr);
};

// Applies one update in place; flat gradient must match the net's layout.
void step_flat(Optimizer& opt, Vector& params, const Vector& flat_grad);
void step(Optimizer& opt, DenseNet& net, const GradTape& tape);

enum class InitScheme { UniformFanIn };

struct LayerSpec {
    std::vector<int> dims;               // [in, h1, ..., out]
    std::vector<Activation> activations; // one per layer
};

DenseNet init_params(const LayerSpec& spec, std::uint64_t seed,
                     InitScheme scheme = InitScheme::UniformFanIn);

// Max relative error between an analytic gradient and central finite
// differences of `loss` over all parameters of `net`.
double finite_diff_check(DenseNet net,
                         const std::function<double(const DenseNet&)>& loss,
                         const Vector& analytic_flat_grad, double h = 1e-5);

double max_rel_error(const Vector& analytic, const Vector& numeric);

} // namespace prop
