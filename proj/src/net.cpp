#include "prop/net.hpp"

#include <algorithm>
#include <cmath>

namespace prop {

std::string activation_name(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
        case Activation::Softmax: return "softmax";
    }
    return "identity";
}

Activation activation_from_name(const std::string& name) {
    if (name == "identity") return Activation::Identity;
    if (name == "tanh") return Activation::Tanh;
    if (name == "relu") return Activation::Relu;
    if (name == "softmax") return Activation::Softmax;
    throw Error(ErrorKind::Config, "unknown activation: " + name);
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
}

Vector DenseNet::flatten_params() const {
    Vector flat;
    flat.reserve(param_count());
    for (const auto& l : layers) {
        flat.insert(flat.end(), l.weight.a.begin(), l.weight.a.end());
        flat.insert(flat.end(), l.bias.begin(), l.bias.end());
    }
    return flat;
}

void DenseNet::unflatten_params(const Vector& flat) {
    if (flat.size() != param_count())
        throw Error(ErrorKind::Logic, "unflatten_params: size mismatch");
    std::size_t off = 0;
    for (auto& l : layers) {
        std::copy(flat.begin() + off, flat.begin() + off + l.weight.size(), l.weight.a.begin());
        off += l.weight.size();
        std::copy(flat.begin() + off, flat.begin() + off + l.bias.size(), l.bias.begin());
        off += l.bias.size();
    }
}

void GradTape::zero() {
    for (auto& m : d_weight) std::fill(m.a.begin(), m.a.end(), 0.0);
    for (auto& b : d_bias) std::fill(b.begin(), b.end(), 0.0);
}

void GradTape::add(const GradTape& other) {
    if (other.d_weight.size() != d_weight.size())
        throw Error(ErrorKind::Logic, "GradTape::add: layer count mismatch");
    for (std::size_t i = 0; i < d_weight.size(); ++i) {
        for (std::size_t j = 0; j < d_weight[i].a.size(); ++j)
            d_weight[i].a[j] += other.d_weight[i].a[j];
        for (std::size_t j = 0; j < d_bias[i].size(); ++j)
            d_bias[i][j] += other.d_bias[i][j];
    }
}

void GradTape::scale(double s) {
    for (auto& m : d_weight)
        for (double& x : m.a) x *= s;
    for (auto& b : d_bias)
        for (double& x : b) x *= s;
}

Vector GradTape::flatten() const {
    Vector flat;
    flat.reserve(param_count());
    for (std::size_t i = 0; i < d_weight.size(); ++i) {
        flat.insert(flat.end(), d_weight[i].a.begin(), d_weight[i].a.end());
        flat.insert(flat.end(), d_bias[i].begin(), d_bias[i].end());
    }
    return flat;
}

std::size_t GradTape::param_count() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < d_weight.size(); ++i)
        n += d_weight[i].size() + d_bias[i].size();
    return n;
}

GradTape make_tape(const DenseNet& net) {
    GradTape t;
    for (const auto& l : net.layers) {
        t.d_weight.emplace_back(l.weight.rows, l.weight.cols);
        t.d_bias.emplace_back(l.bias.size(), 0.0);
    }
    return t;
}

Vector softmax(const Vector& logits) {
    double mx = *std::max_element(logits.begin(), logits.end());
    Vector out(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (double& x : out) x /= sum;
    return out;
}

static Vector apply_activation(Activation act, const Vector& pre, int layer_index) {
    switch (act) {
        case Activation::Identity:
            return pre;
        case Activation::Tanh: {
            Vector out(pre.size());
            for (std::size_t i = 0; i < pre.size(); ++i) out[i] = std::tanh(pre[i]);
            return out;
        }
        case Activation::Relu: {
            Vector out(pre.size());
            for (std::size_t i = 0; i < pre.size(); ++i) out[i] = pre[i] > 0.0 ? pre[i] : 0.0;
            return out;
        }
        case Activation::Softmax:
            return softmax(pre);
    }
    throw Error(ErrorKind::Logic, "bad activation at layer " + std::to_string(layer_index));
}

std::pair<Vector, ForwardCache> forward(const DenseNet& net, const Vector& x) {
    if (net.layers.empty())
        throw Error(ErrorKind::Logic, "forward: empty network");
    if (static_cast<int>(x.size()) != net.input_dim())
        throw Error(ErrorKind::Logic,
                    "forward: input dim " + std::to_string(x.size()) + " != layer 0 input dim " +
                        std::to_string(net.input_dim()));
    ForwardCache cache;
    cache.input = x;
    Vector cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        if (static_cast<int>(cur.size()) != l.weight.cols)
            throw Error(ErrorKind::Logic,
                        "forward: dimension mismatch entering layer " + std::to_string(i));
        if (l.act == Activation::Softmax && i + 1 != net.layers.size())
            throw Error(ErrorKind::Logic, "softmax only allowed at the final layer");
        cache.inputs.push_back(cur);
        Vector pre = matvec(l.weight, cur);
        for (std::size_t j = 0; j < pre.size(); ++j) pre[j] += l.bias[j];
        cache.pre.push_back(pre);
        cur = apply_activation(l.act, pre, static_cast<int>(i));
        cache.post.push_back(cur);
    }
    return {cur, cache};
}

static void check_cache(const DenseNet& net, const ForwardCache& cache) {
    if (cache.inputs.size() != net.layers.size())
        throw Error(ErrorKind::Logic, "backward: cache does not match network (layer count)");
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        if (static_cast<int>(cache.inputs[i].size()) != net.layers[i].weight.cols ||
            static_cast<int>(cache.pre[i].size()) != net.layers[i].weight.rows)
            throw Error(ErrorKind::Logic,
                        "backward: stale cache at layer " + std::to_string(i));
    }
}

BackwardResult backward(const DenseNet& net, const ForwardCache& cache,
                        const Vector& upstream, bool upstream_is_logit_grad) {
    check_cache(net, cache);
    BackwardResult res;
    res.tape = make_tape(net);
    Vector grad = upstream; // w.r.t. current layer output (or its pre-activation)

    for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
        const Layer& l = net.layers[i];
        Vector d_pre;
        bool skip_act = upstream_is_logit_grad && i == static_cast<int>(net.layers.size()) - 1;
        if (skip_act) {
            d_pre = grad;
        } else {
            switch (l.act) {
                case Activation::Identity:
                    d_pre = grad;
                    break;
                case Activation::Tanh: {
                    d_pre.resize(grad.size());
                    for (std::size_t j = 0; j < grad.size(); ++j) {
                        double a = cache.post[i][j];
                        d_pre[j] = grad[j] * (1.0 - a * a);
                    }
                    break;
                }
                case Activation::Relu: {
                    d_pre.resize(grad.size());
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        d_pre[j] = cache.pre[i][j] > 0.0 ? grad[j] : 0.0;
                    break;
                }
                case Activation::Softmax: {
                    // J = diag(p) - p p^T
                    const Vector& p = cache.post[i];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < grad.size(); ++j) dot += grad[j] * p[j];
                    d_pre.resize(grad.size());
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        d_pre[j] = p[j] * (grad[j] - dot);
                    break;
                }
            }
        }
        add_outer(res.tape.d_weight[i], d_pre, cache.inputs[i]);
        for (std::size_t j = 0; j < d_pre.size(); ++j) res.tape.d_bias[i][j] += d_pre[j];
        grad = matvec_t(l.weight, d_pre);
    }
    res.d_input = grad;
    return res;
}

LossValue loss_mse(const Vector& pred, const Vector& target) {
    if (pred.size() != target.size())
        throw Error(ErrorKind::Logic, "loss_mse: shape mismatch");
    LossValue lv;
    lv.grad.resize(pred.size());
    double n = static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - target[i];
        lv.value += d * d / n;
        lv.grad[i] = 2.0 * d / n;
    }
    return lv;
}

LossValue loss_xent(const Vector& logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw Error(ErrorKind::Logic, "loss_xent: label out of range");
    double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double z : logits) lse += std::exp(z - mx);
    lse = mx + std::log(lse);
    LossValue lv;
    lv.value = lse - logits[label];
    lv.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        lv.grad[i] = std::exp(logits[i] - lse);
        if (static_cast<int>(i) == label) lv.grad[i] -= 1.0;
    }
    return lv;
}

LossValue loss_xent_dist(const Vector& logits, const Vector& target_probs) {
    if (logits.size() != target_probs.size())
        throw Error(ErrorKind::Logic, "loss_xent_dist: shape mismatch");
    double mx = *std::max_element(logits.begin(), logits.end());
    double lse = 0.0;
    for (double z : logits) lse += std::exp(z - mx);
    lse = mx + std::log(lse);
    LossValue lv;
    lv.grad.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
        lv.value += target_probs[i] * (lse - logits[i]);
        lv.grad[i] = std::exp(logits[i] - lse) - target_probs[i];
    }
    return lv;
}

Optimizer Optimizer::sgd(double lr) {
    Optimizer o;
    o.kind = OptimizerKind::Sgd;
    o.learning_rate = lr;
    return o;
}

Optimizer Optimizer::adam(double lr) {
    Optimizer o;
    o.kind = OptimizerKind::Adam;
    o.learning_rate = lr;
    return o;
}

void step_flat(Optimizer& opt, Vector& params, const Vector& flat_grad) {
    if (params.size() != flat_grad.size())
        throw Error(ErrorKind::Logic, "step: gradient size mismatch");
    if (opt.learning_rate <= 0.0)
        throw Error(ErrorKind::Config, "step: learning rate must be positive");
    for (std::size_t i = 0; i < flat_grad.size(); ++i)
        if (!std::isfinite(flat_grad[i]))
            throw Error(ErrorKind::Numeric,
                        "step: non-finite gradient at parameter " + std::to_string(i));

    if (opt.kind == OptimizerKind::Sgd) {
        for (std::size_t i = 0; i < params.size(); ++i)
            params[i] -= opt.learning_rate * flat_grad[i];
        return;
    }
    if (opt.m.size() != params.size()) {
        opt.m.assign(params.size(), 0.0);
        opt.v.assign(params.size(), 0.0);
        opt.t = 0;
    }
    opt.t += 1;
    double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.t));
    double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        opt.m[i] = opt.beta1 * opt.m[i] + (1.0 - opt.beta1) * flat_grad[i];
        opt.v[i] = opt.beta2 * opt.v[i] + (1.0 - opt.beta2) * flat_grad[i] * flat_grad[i];
        double mhat = opt.m[i] / bc1;
        double vhat = opt.v[i] / bc2;
        params[i] -= opt.learning_rate * mhat / (std::sqrt(vhat) + opt.eps);
    }
}

void step(Optimizer& opt, DenseNet& net, const GradTape& tape) {
    if (tape.param_count() != net.param_count())
        throw Error(ErrorKind::Logic, "step: tape not shape-congruent with network");
    // Identify the offending layer before updating anything.
    for (std::size_t i = 0; i < tape.d_weight.size(); ++i) {
        if (!all_finite(tape.d_weight[i]) || !all_finite(tape.d_bias[i]))
            throw Error(ErrorKind::Numeric,
                        "step: non-finite gradient in layer " + std::to_string(i));
    }
    Vector params = net.flatten_params();
    step_flat(opt, params, tape.flatten());
    net.unflatten_params(params);
}

DenseNet init_params(const LayerSpec& spec, std::uint64_t seed, InitScheme scheme) {
    if (spec.dims.size() < 2)
        throw Error(ErrorKind::Config, "init_params: need at least input and output dims");
    if (spec.activations.size() != spec.dims.size() - 1)
        throw Error(ErrorKind::Config, "init_params: one activation per layer required");
    (void)scheme;
    Rng rng(seed);
    DenseNet net;
    for (std::size_t i = 0; i + 1 < spec.dims.size(); ++i) {
        int in = spec.dims[i];
        int out = spec.dims[i + 1];
        if (in <= 0 || out <= 0)
            throw Error(ErrorKind::Config, "init_params: dimensions must be positive");
        Layer l;
        l.weight = Matrix(out, in);
        double bound = std::sqrt(6.0 / static_cast<double>(in));
        for (double& w : l.weight.a) w = rng.uniform(-bound, bound);
        l.bias.assign(out, 0.0);
        l.act = spec.activations[i];
        net.layers.push_back(std::move(l));
    }
    return net;
}

double max_rel_error(const Vector& analytic, const Vector& numeric) {
    double worst = 0.0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), 1e-8});
        worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
    }
    return worst;
}

double finite_diff_check(DenseNet net,
                         const std::function<double(const DenseNet&)>& loss,
                         const Vector& analytic_flat_grad, double h) {
    if (h <= 0.0)
        throw Error(ErrorKind::Config, "finite_diff_check: h must be positive");
    Vector params = net.flatten_params();
    Vector numeric(params.size(), 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        double orig = params[i];
        params[i] = orig + h;
        net.unflatten_params(params);
        double lp = loss(net);
        params[i] = orig - h;
        net.unflatten_params(params);
        double lm = loss(net);
        params[i] = orig;
        numeric[i] = (lp - lm) / (2.0 * h);
    }
    net.unflatten_params(params);
    return max_rel_error(analytic_flat_grad, numeric);
}

} // namespace prop
