#pragma once

#include <map>
#include <optional>

#include "prop/keyspace.hpp"
#include "prop/net.hpp"

namespace prop {

// Maps a key's ±1 features to a modulation vector with tanh output, so every
// component lies in (-1, 1). One encoder per modulated layer.
struct KeyEncoder {
    DenseNet net;
    int layer_index = -1;
};

// Base policy plus key encoders. With the null key the encoders are bypassed
// and the forward pass is identical to the plain base network.
struct PropPolicy {
    DenseNet base;
    std::map<int, KeyEncoder> encoders;
    std::optional<DenseNet> frozen_reference; // copy of the pretrained weights

    int key_length = 0;

    std::size_t param_count() const;
    Vector flatten_params() const; // base first, encoders ascending
    void unflatten_params(const Vector& flat);
};

PropPolicy attach(const DenseNet& base, const std::vector<int>& layer_indices,
                  const std::vector<int>& encoder_hidden, int key_len, std::uint64_t seed);

struct ModCache {
    ForwardCache base_cache;
    // Per modulated layer: the encoder's cache, delta, and the unscaled input.
    std::map<int, ForwardCache> encoder_caches;
    std::map<int, Vector> deltas;
    std::map<int, Vector> raw_inputs;
    bool null_key = false;
};

// Deltas depend only on the key, so batch loops can run every encoder once
// per key and reuse the result for each example.
struct KeyContext {
    bool null_key = true;
    std::map<int, ForwardCache> encoder_caches;
    std::map<int, Vector> deltas;
};

KeyContext make_key_context(const PropPolicy& policy, const Key& k);

std::pair<Vector, ModCache> modulated_forward(const PropPolicy& policy, const Vector& x,
                                              const Key& k);
// Same pass with precomputed deltas; the returned cache carries no encoder
// caches of its own (they live in the context).
std::pair<Vector, ModCache> modulated_forward_cached(const PropPolicy& policy, const Vector& x,
                                                     const KeyContext& ctx);

struct ModBackwardResult {
    GradTape base_tape;
    std::map<int, GradTape> encoder_tapes;
    Vector d_input;
};

ModBackwardResult modulated_backward(const PropPolicy& policy, const ModCache& cache,
                                     const Vector& upstream, bool upstream_is_logit_grad = false);

// Batched variant: accumulates scaled base-parameter gradients into `base_acc`
// and d(loss)/d(delta) into `d_delta_acc` instead of allocating tapes and
// backpropagating through the encoders per example. Finish with
// encoder_grads_from_ddelta once per (key, batch). Returns the input gradient.
Vector modulated_backward_cached(const PropPolicy& policy, const ModCache& cache,
                                 const KeyContext& ctx, const Vector& upstream,
                                 bool upstream_is_logit_grad, GradTape& base_acc,
                                 double base_scale, std::map<int, Vector>& d_delta_acc,
                                 double d_delta_scale = 1.0);

std::map<int, GradTape> encoder_grads_from_ddelta(const PropPolicy& policy, const KeyContext& ctx,
                                                  const std::map<int, Vector>& d_delta_acc);

// Mean L2 distance between the modulated policy under key k and a reference
// network over a set of probe states.
double behavioral_distance(const PropPolicy& policy, const DenseNet& reference,
                           const std::vector<Vector>& probe_states, const Key& k);

} // namespace prop
