#include "prop/modnet.hpp"

#include <algorithm>
#include <cmath>

#include "prop/error.hpp"

namespace prop {

std::size_t PropPolicy::param_count() const {
    std::size_t n = base.param_count();
    for (const auto& [idx, enc] : encoders) {
        (void)idx;
        n += enc.net.param_count();
    }
    return n;
}

Vector PropPolicy::flatten_params() const {
    Vector flat = base.flatten_params();
    for (const auto& [idx, enc] : encoders) {
        (void)idx;
        Vector e = enc.net.flatten_params();
        flat.insert(flat.end(), e.begin(), e.end());
    }
    return flat;
}

void PropPolicy::unflatten_params(const Vector& flat) {
    if (flat.size() != param_count())
        throw Error(ErrorKind::Logic, "PropPolicy::unflatten_params: size mismatch");
    std::size_t off = base.param_count();
    base.unflatten_params(Vector(flat.begin(), flat.begin() + off));
    for (auto& [idx, enc] : encoders) {
        (void)idx;
        std::size_t n = enc.net.param_count();
        enc.net.unflatten_params(Vector(flat.begin() + off, flat.begin() + off + n));
        off += n;
    }
}

PropPolicy attach(const DenseNet& base, const std::vector<int>& layer_indices,
                  const std::vector<int>& encoder_hidden, int key_len, std::uint64_t seed) {
    if (key_len <= 0)
        throw Error(ErrorKind::Config, "attach: key length must be positive");
    PropPolicy policy;
    policy.base = base;
    policy.frozen_reference = base;
    policy.key_length = key_len;
    Rng rng(seed);
    for (int idx : layer_indices) {
        // Index 0 would scale the raw input, not an intermediate feature.
        if (idx < 1 || idx >= static_cast<int>(base.layers.size()))
            throw Error(ErrorKind::Config,
                        "attach: layer index " + std::to_string(idx) +
                            " is not a hidden layer");
        if (policy.encoders.count(idx))
            throw Error(ErrorKind::Config, "attach: duplicate layer index");
        int width = base.layers[idx].weight.cols; // width of z_i, the layer input
        LayerSpec spec;
        spec.dims.push_back(key_len);
        for (int h : encoder_hidden) spec.dims.push_back(h);
        spec.dims.push_back(width);
        spec.activations.assign(spec.dims.size() - 1, Activation::Tanh);
        KeyEncoder enc;
        enc.net = init_params(spec, rng.fork(static_cast<std::uint64_t>(idx)).next_u64());
        enc.layer_index = idx;
        policy.encoders.emplace(idx, std::move(enc));
    }
    return policy;
}

KeyContext make_key_context(const PropPolicy& policy, const Key& k) {
    KeyContext ctx;
    ctx.null_key = k.is_null();
    if (ctx.null_key) return ctx;
    if (k.length() != policy.key_length)
        throw Error(ErrorKind::Logic, "make_key_context: key length mismatch");
    Vector key_feats = key_to_features(k);
    for (const auto& [idx, enc] : policy.encoders) {
        auto [delta, enc_cache] = forward(enc.net, key_feats);
        ctx.deltas[idx] = std::move(delta);
        ctx.encoder_caches[idx] = std::move(enc_cache);
    }
    return ctx;
}

std::pair<Vector, ModCache> modulated_forward(const PropPolicy& policy, const Vector& x,
                                              const Key& k) {
    KeyContext ctx = make_key_context(policy, k);
    auto result = modulated_forward_cached(policy, x, ctx);
    result.second.encoder_caches = std::move(ctx.encoder_caches);
    return result;
}

std::pair<Vector, ModCache> modulated_forward_cached(const PropPolicy& policy, const Vector& x,
                                                     const KeyContext& ctx) {
    const DenseNet& net = policy.base;
    if (net.layers.empty())
        throw Error(ErrorKind::Logic, "modulated_forward: empty base network");
    if (static_cast<int>(x.size()) != net.input_dim())
        throw Error(ErrorKind::Logic, "modulated_forward: input dimension mismatch");

    ModCache cache;
    cache.null_key = ctx.null_key;
    cache.base_cache.input = x;

    Vector cur = x;
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const Layer& l = net.layers[i];
        Vector layer_in = cur;
        auto it = ctx.deltas.find(static_cast<int>(i));
        if (it != ctx.deltas.end() && !ctx.null_key) {
            const Vector& delta = it->second;
            cache.raw_inputs[static_cast<int>(i)] = cur;
            cache.deltas[static_cast<int>(i)] = delta;
            for (std::size_t j = 0; j < layer_in.size(); ++j) layer_in[j] = delta[j] * cur[j];
        }
        cache.base_cache.inputs.push_back(layer_in);
        Vector pre = matvec(l.weight, layer_in);
        for (std::size_t j = 0; j < pre.size(); ++j) pre[j] += l.bias[j];
        cache.base_cache.pre.push_back(pre);
        switch (l.act) {
            case Activation::Identity:
                cur = pre;
                break;
            case Activation::Tanh:
                cur.resize(pre.size());
                for (std::size_t j = 0; j < pre.size(); ++j) cur[j] = std::tanh(pre[j]);
                break;
            case Activation::Relu:
                cur.resize(pre.size());
                for (std::size_t j = 0; j < pre.size(); ++j) cur[j] = pre[j] > 0.0 ? pre[j] : 0.0;
                break;
            case Activation::Softmax:
                if (i + 1 != net.layers.size())
                    throw Error(ErrorKind::Logic, "softmax only allowed at the final layer");
                cur = softmax(pre);
                break;
        }
        cache.base_cache.post.push_back(cur);
    }
    return {cur, cache};
}

namespace {

// Backward through the base network only, accumulating scaled parameter
// gradients into base_acc; per modulated layer the gradient with respect to
// delta is written into d_delta_out. Returns the input gradient.
Vector base_backward_core(const PropPolicy& policy, const ModCache& cache,
                          const Vector& upstream, bool upstream_is_logit_grad,
                          GradTape& base_acc, double base_scale,
                          std::map<int, Vector>& d_delta_out) {
    const DenseNet& net = policy.base;
    if (cache.base_cache.inputs.size() != net.layers.size())
        throw Error(ErrorKind::Logic, "modulated_backward: cache does not match policy");

    Vector grad = upstream;
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
                case Activation::Tanh:
                    d_pre.resize(grad.size());
                    for (std::size_t j = 0; j < grad.size(); ++j) {
                        double a = cache.base_cache.post[i][j];
                        d_pre[j] = grad[j] * (1.0 - a * a);
                    }
                    break;
                case Activation::Relu:
                    d_pre.resize(grad.size());
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        d_pre[j] = cache.base_cache.pre[i][j] > 0.0 ? grad[j] : 0.0;
                    break;
                case Activation::Softmax: {
                    const Vector& p = cache.base_cache.post[i];
                    double dot = 0.0;
                    for (std::size_t j = 0; j < grad.size(); ++j) dot += grad[j] * p[j];
                    d_pre.resize(grad.size());
                    for (std::size_t j = 0; j < grad.size(); ++j)
                        d_pre[j] = p[j] * (grad[j] - dot);
                    break;
                }
            }
        }
        Vector d_scaled = matvec_t(l.weight, d_pre);
        if (base_scale != 1.0)
            for (double& v : d_pre) v *= base_scale;
        add_outer(base_acc.d_weight[i], d_pre, cache.base_cache.inputs[i]);
        for (std::size_t j = 0; j < d_pre.size(); ++j) base_acc.d_bias[i][j] += d_pre[j];

        auto dit = cache.deltas.find(i);
        if (dit != cache.deltas.end() && !cache.null_key) {
            const Vector& delta = dit->second;
            const Vector& raw = cache.raw_inputs.at(i);
            Vector d_delta(delta.size());
            Vector d_raw(raw.size());
            for (std::size_t j = 0; j < delta.size(); ++j) {
                d_delta[j] = d_scaled[j] * raw[j];
                d_raw[j] = d_scaled[j] * delta[j];
            }
            d_delta_out[i] = std::move(d_delta);
            grad = std::move(d_raw);
        } else {
            grad = std::move(d_scaled);
        }
    }
    return grad;
}

} // namespace

ModBackwardResult modulated_backward(const PropPolicy& policy, const ModCache& cache,
                                     const Vector& upstream, bool upstream_is_logit_grad) {
    ModBackwardResult res;
    res.base_tape = make_tape(policy.base);
    std::map<int, Vector> d_deltas;
    res.d_input = base_backward_core(policy, cache, upstream, upstream_is_logit_grad,
                                     res.base_tape, 1.0, d_deltas);
    for (const auto& [idx, enc] : policy.encoders)
        res.encoder_tapes.emplace(idx, make_tape(enc.net));
    for (const auto& [idx, d_delta] : d_deltas) {
        const KeyEncoder& enc = policy.encoders.at(idx);
        BackwardResult enc_back = backward(enc.net, cache.encoder_caches.at(idx), d_delta);
        res.encoder_tapes.at(idx).add(enc_back.tape);
    }
    return res;
}

Vector modulated_backward_cached(const PropPolicy& policy, const ModCache& cache,
                                 const KeyContext& ctx, const Vector& upstream,
                                 bool upstream_is_logit_grad, GradTape& base_acc,
                                 double base_scale, std::map<int, Vector>& d_delta_acc,
                                 double d_delta_scale) {
    std::map<int, Vector> d_deltas;
    Vector d_input = base_backward_core(policy, cache, upstream, upstream_is_logit_grad,
                                        base_acc, base_scale, d_deltas);
    if (!ctx.null_key) {
        for (const auto& [idx, d_delta] : d_deltas) {
            Vector& acc = d_delta_acc[idx];
            if (acc.empty()) acc.assign(d_delta.size(), 0.0);
            for (std::size_t j = 0; j < d_delta.size(); ++j) acc[j] += d_delta_scale * d_delta[j];
        }
    }
    return d_input;
}

std::map<int, GradTape> encoder_grads_from_ddelta(const PropPolicy& policy, const KeyContext& ctx,
                                                  const std::map<int, Vector>& d_delta_acc) {
    std::map<int, GradTape> tapes;
    for (const auto& [idx, enc] : policy.encoders) tapes.emplace(idx, make_tape(enc.net));
    if (ctx.null_key) return tapes;
    for (const auto& [idx, d_delta] : d_delta_acc) {
        const KeyEncoder& enc = policy.encoders.at(idx);
        BackwardResult enc_back = backward(enc.net, ctx.encoder_caches.at(idx), d_delta);
        tapes.at(idx).add(enc_back.tape);
    }
    return tapes;
}

double behavioral_distance(const PropPolicy& policy, const DenseNet& reference,
                           const std::vector<Vector>& probe_states, const Key& k) {
    if (probe_states.empty())
        throw Error(ErrorKind::Config, "behavioral_distance: empty probe set");
    double total = 0.0;
    for (const auto& x : probe_states) {
        Vector a = modulated_forward(policy, x, k).first;
        Vector b = forward(reference, x).first;
        total += l2_distance(a, b);
    }
    return total / static_cast<double>(probe_states.size());
}

} // namespace prop
