#include "prop/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "prop/error.hpp"

namespace prop {

void TrainConfig::validate() const {
    if (epsilon < 1) throw Error(ErrorKind::Config, "TrainConfig: epsilon must be >= 1");
    if (nk < 0) throw Error(ErrorKind::Config, "TrainConfig: nk must be >= 0");
    if (learning_rate <= 0.0)
        throw Error(ErrorKind::Config, "TrainConfig: learning rate must be positive");
    if (batch_size <= 0) throw Error(ErrorKind::Config, "TrainConfig: batch size must be positive");
    if (lr_final_frac <= 0.0 || lr_final_frac > 1.0)
        throw Error(ErrorKind::Config, "TrainConfig: lr_final_frac must be in (0, 1]");
}

// Linearly anneals the learning rate from learning_rate down to
// lr_final_frac * learning_rate over the epochs.
static double epoch_lr(const TrainConfig& cfg, int epoch) {
    if (cfg.epochs <= 1 || cfg.lr_final_frac == 1.0) return cfg.learning_rate;
    double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
    return cfg.learning_rate * (1.0 - (1.0 - cfg.lr_final_frac) * t);
}

void PPOConfig::validate() const {
    if (clip_ratio < 0.0 || clip_ratio >= 1.0)
        throw Error(ErrorKind::Config, "PPOConfig: clip ratio must be in [0, 1)");
    if (gamma <= 0.0 || gamma > 1.0)
        throw Error(ErrorKind::Config, "PPOConfig: gamma must be in (0, 1]");
}

SupervisedData to_supervised(const DemoSet& demos) {
    SupervisedData d;
    d.kind = LossKind::Mse;
    for (const auto& demo : demos.demos) {
        d.x.push_back(demo.x);
        d.y_vec.push_back(demo.u);
    }
    return d;
}

SupervisedData to_supervised(const Batch& batch) {
    SupervisedData d;
    d.kind = LossKind::Xent;
    d.x = batch.x;
    d.y_lab = batch.y;
    return d;
}

Vector ModGrads::flatten() const {
    Vector flat = base.flatten();
    for (const auto& [idx, tape] : encoders) {
        (void)idx;
        Vector e = tape.flatten();
        flat.insert(flat.end(), e.begin(), e.end());
    }
    return flat;
}

ModGrads make_mod_grads(const PropPolicy& policy) {
    ModGrads g;
    g.base = make_tape(policy.base);
    for (const auto& [idx, enc] : policy.encoders) g.encoders.emplace(idx, make_tape(enc.net));
    return g;
}

static void accumulate(ModGrads& into, const ModBackwardResult& res, double scale) {
    GradTape scaled = res.base_tape;
    scaled.scale(scale);
    into.base.add(scaled);
    for (auto& [idx, tape] : into.encoders) {
        GradTape e = res.encoder_tapes.at(idx);
        e.scale(scale);
        tape.add(e);
    }
}

double term_loss(const PropPolicy& policy, const Key& k, const SupervisedData& data,
                 const std::vector<std::size_t>& indices, ModGrads* grads, Rng* noise_rng) {
    if (indices.empty())
        throw Error(ErrorKind::Logic, "term_loss: empty index set");
    double total = 0.0;
    double inv_n = 1.0 / static_cast<double>(indices.size());
    int out_dim = policy.base.output_dim();
    Vector uniform_probs;
    if (data.kind == LossKind::XentUniform)
        uniform_probs.assign(out_dim, 1.0 / static_cast<double>(out_dim));

    // The modulation vector depends only on the key, so the encoders run once
    // per term; per-example gradients with respect to it sum linearly.
    KeyContext ctx = make_key_context(policy, k);
    std::map<int, Vector> d_delta_acc;

    for (std::size_t idx : indices) {
        auto [out, cache] = modulated_forward_cached(policy, data.x[idx], ctx);
        LossValue lv;
        bool logit_grad = false;
        switch (data.kind) {
            case LossKind::Mse:
                lv = loss_mse(out, data.y_vec[idx]);
                break;
            case LossKind::Xent:
                lv = loss_xent(cache.base_cache.pre.back(), data.y_lab[idx]);
                logit_grad = true;
                break;
            case LossKind::XentUniform:
                lv = loss_xent_dist(cache.base_cache.pre.back(), uniform_probs);
                logit_grad = true;
                break;
            case LossKind::MseUniformNoise: {
                if (!noise_rng)
                    throw Error(ErrorKind::Logic, "term_loss: noise rng required");
                Vector target(out.size());
                for (double& t : target) t = noise_rng->uniform(-data.u_max, data.u_max);
                lv = loss_mse(out, target);
                break;
            }
        }
        total += lv.value * inv_n;
        if (grads)
            modulated_backward_cached(policy, cache, ctx, lv.grad, logit_grad, grads->base,
                                      inv_n, d_delta_acc, inv_n);
    }
    if (grads) {
        std::map<int, GradTape> enc_tapes = encoder_grads_from_ddelta(policy, ctx, d_delta_acc);
        for (auto& [idx, tape] : grads->encoders) tape.add(enc_tapes.at(idx));
    }
    return total;
}

CompositeLoss composite_loss(const PropPolicy& policy, const std::vector<UserSpec>& users,
                             const KeyBatch& key_batch,
                             const std::map<int, SupervisedData>& personalized_data,
                             const SupervisedData& general_data,
                             const std::vector<std::size_t>& personalized_indices,
                             const std::vector<std::size_t>& general_indices,
                             double general_term_weight, Rng* noise_rng,
                             const SupervisedData* null_data) {
    validate_key_batch(key_batch);
    for (const auto& u : users) {
        for (const auto& k : key_batch.neighbors_k1)
            if (k == u.key)
                throw Error(ErrorKind::Logic, "composite_loss: user key found in K1");
        for (const auto& k : key_batch.random_k2)
            if (!k.is_null() && k == u.key)
                throw Error(ErrorKind::Logic, "composite_loss: user key found in K2");
    }

    CompositeLoss out;
    out.grads = make_mod_grads(policy);
    for (const auto& u : users) {
        auto it = personalized_data.find(u.objective_id);
        if (it == personalized_data.end())
            throw Error(ErrorKind::Config, "composite_loss: missing personalized data for "
                                               "objective " +
                                               std::to_string(u.objective_id));
        double l = term_loss(policy, u.key, it->second, personalized_indices, &out.grads,
                             noise_rng);
        out.personalized_sum += l;
        out.total += l;
        out.term_count += 1;
    }
    auto general_term = [&](const Key& k) {
        ModGrads g = make_mod_grads(policy);
        const SupervisedData& data =
            (k.is_null() && null_data) ? *null_data : general_data;
        double l = term_loss(policy, k, data, general_indices, &g, noise_rng);
        GradTape wb = g.base;
        wb.scale(general_term_weight);
        out.grads.base.add(wb);
        for (auto& [idx, tape] : out.grads.encoders) {
            GradTape we = g.encoders.at(idx);
            we.scale(general_term_weight);
            tape.add(we);
        }
        out.general_sum += l;
        out.total += general_term_weight * l;
        out.term_count += 1;
    };
    for (const auto& k : key_batch.neighbors_k1) general_term(k);
    for (const auto& k : key_batch.random_k2) general_term(k);
    return out;
}

static std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        std::size_t j = rng.integer(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

static std::vector<std::size_t> slice_cyclic(const std::vector<std::size_t>& idx,
                                             std::size_t start, std::size_t count) {
    std::vector<std::size_t> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(idx[(start + i) % idx.size()]);
    return out;
}

PretrainResult pretrain_base(const SupervisedData& data, const LayerSpec& arch,
                             const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0)
        throw Error(ErrorKind::Config, "pretrain_base: empty dataset");
    PretrainResult res;
    res.net = init_params(arch, cfg.seed);
    if (cfg.epochs == 0) return res;

    Rng rng(cfg.seed ^ 0x5e7a11ull);
    Optimizer opt = cfg.optimizer == OptimizerKind::Adam ? Optimizer::adam(cfg.learning_rate)
                                                         : Optimizer::sgd(cfg.learning_rate);
    std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.learning_rate = epoch_lr(cfg, epoch);
        auto idx = shuffled_indices(data.size(), rng);
        double epoch_loss = 0.0;
        std::size_t n_batches = (data.size() + bs - 1) / bs;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::size_t lo = b * bs;
            std::size_t hi = std::min(lo + bs, data.size());
            GradTape tape = make_tape(res.net);
            double inv_n = 1.0 / static_cast<double>(hi - lo);
            double batch_loss = 0.0;
            for (std::size_t i = lo; i < hi; ++i) {
                std::size_t s = idx[i];
                auto [out, cache] = forward(res.net, data.x[s]);
                LossValue lv;
                bool logit_grad = false;
                if (data.kind == LossKind::Mse) {
                    lv = loss_mse(out, data.y_vec[s]);
                } else {
                    lv = loss_xent(cache.pre.back(), data.y_lab[s]);
                    logit_grad = true;
                }
                batch_loss += lv.value * inv_n;
                BackwardResult back = backward(res.net, cache, lv.grad, logit_grad);
                back.tape.scale(inv_n);
                tape.add(back.tape);
            }
            if (!std::isfinite(batch_loss))
                throw Error(ErrorKind::Numeric,
                            "pretrain_base: diverged at epoch " + std::to_string(epoch));
            step(opt, res.net, tape);
            epoch_loss += batch_loss / static_cast<double>(n_batches);
        }
        res.loss_history.push_back(epoch_loss);
        res.final_loss = epoch_loss;
    }
    return res;
}

PersonalizeResult personalize(PropPolicy& policy, const std::vector<UserSpec>& users,
                              const std::map<int, SupervisedData>& personalized_data,
                              const SupervisedData& general_data, const TrainConfig& cfg,
                              const SupervisedData* null_data) {
    cfg.validate();
    if (general_data.size() == 0)
        throw Error(ErrorKind::Config, "personalize: empty general dataset");
    for (const auto& u : users) {
        if (u.key.is_null())
            throw Error(ErrorKind::Config, "personalize: null user key");
        if (u.key.length() != cfg.key_length)
            throw Error(ErrorKind::Config, "personalize: user key length mismatch");
    }

    Rng rng(cfg.seed ^ 0x9e25ull);
    Rng key_rng = rng.fork(1);
    Rng noise_rng = rng.fork(2);

    std::vector<Key> user_keys;
    for (const auto& u : users) user_keys.push_back(u.key);

    Optimizer opt = cfg.optimizer == OptimizerKind::Adam ? Optimizer::adam(cfg.learning_rate)
                                                         : Optimizer::sgd(cfg.learning_rate);
    std::size_t base_params = policy.base.param_count();
    std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::size_t personalized_size = 0;
    for (const auto& [id, d] : personalized_data) {
        (void)id;
        personalized_size = std::max(personalized_size, d.size());
    }

    PersonalizeResult res;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.learning_rate = epoch_lr(cfg, epoch);
        KeyBatch key_batch;
        for (const auto& u : users) key_batch.personalized.push_back({u.key, u.objective_id});
        if (!users.empty() && cfg.k1_count > 0)
            key_batch.neighbors_k1 = sample_K1(user_keys, cfg.epsilon, cfg.k1_count, key_rng);
        std::vector<Key> avoid = user_keys;
        avoid.insert(avoid.end(), key_batch.neighbors_k1.begin(), key_batch.neighbors_k1.end());
        key_batch.random_k2 = sample_K2(avoid, cfg.nk, cfg.key_length, key_rng);

        auto general_idx = shuffled_indices(general_data.size(), rng);
        std::vector<std::size_t> personalized_idx;
        if (personalized_size > 0) personalized_idx = shuffled_indices(personalized_size, rng);

        EpochRow row;
        row.epoch = epoch;
        std::size_t n_batches = (general_data.size() + bs - 1) / bs;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::size_t lo = b * bs;
            std::size_t hi = std::min(lo + bs, general_data.size());
            std::vector<std::size_t> g_batch(general_idx.begin() + lo, general_idx.begin() + hi);
            std::vector<std::size_t> p_batch;
            if (!users.empty())
                p_batch = slice_cyclic(personalized_idx, lo % std::max<std::size_t>(1, personalized_size),
                                       hi - lo);
            CompositeLoss cl = composite_loss(policy, users, key_batch, personalized_data,
                                              general_data, p_batch, g_batch,
                                              cfg.general_term_weight, &noise_rng, null_data);
            if (!std::isfinite(cl.total))
                throw Error(ErrorKind::Numeric,
                            "personalize: diverged at epoch " + std::to_string(epoch));
            Vector flat_grad = cl.grads.flatten();
            if (cfg.freeze_base)
                std::fill(flat_grad.begin(), flat_grad.begin() + base_params, 0.0);
            Vector params = policy.flatten_params();
            step_flat(opt, params, flat_grad);
            policy.unflatten_params(params);

            row.personalized_loss += cl.personalized_sum / static_cast<double>(n_batches);
            row.general_loss += cl.general_sum / static_cast<double>(n_batches);
            row.term_count = cl.term_count;
        }
        res.history.push_back(row);
    }
    return res;
}

// ---- PPO ----

namespace {

struct Sample {
    Vector obs;
    Vector action;
    double logp_old = 0.0;
    double ret = 0.0;
    double adv = 0.0;
    int key_index = 0; // into the iteration's key list
};

double gaussian_logp(const Vector& action, const Vector& mean, double log_std) {
    double var = std::exp(2.0 * log_std);
    double lp = 0.0;
    for (std::size_t i = 0; i < action.size(); ++i) {
        double d = action[i] - mean[i];
        lp += -d * d / (2.0 * var) - log_std - 0.9189385332046727; // log sqrt(2 pi)
    }
    return lp;
}

} // namespace

PPOResult ppo_train(PropPolicy& policy, const ReachEnv& env, const std::vector<UserSpec>& users,
                    const PPOConfig& ppo, const TrainConfig& cfg) {
    ppo.validate();
    cfg.validate();
    int n = env.dim;
    if (policy.base.input_dim() != 2 * n || policy.base.output_dim() != n + 1)
        throw Error(ErrorKind::Config,
                    "ppo_train: base must map [pos ++ goal] to [action mean ++ value]");

    Rng rng(cfg.seed ^ 0x99071ull);
    Rng key_rng = rng.fork(1);
    std::vector<Key> user_keys;
    for (const auto& u : users) user_keys.push_back(u.key);

    Optimizer opt = cfg.optimizer == OptimizerKind::Adam ? Optimizer::adam(cfg.learning_rate)
                                                         : Optimizer::sgd(cfg.learning_rate);
    double std_dev = std::exp(ppo.log_std);

    PPOResult res;
    TrainConfig lr_schedule = cfg;
    lr_schedule.epochs = ppo.iterations;
    for (int iter = 0; iter < ppo.iterations; ++iter) {
        opt.learning_rate = epoch_lr(lr_schedule, iter);
        // Key list for this iteration: user keys, then negatives.
        std::vector<Key> keys = user_keys;
        std::vector<bool> is_user(keys.size(), true);
        if (!user_keys.empty() && cfg.k1_count > 0)
            for (auto& k : sample_K1(user_keys, cfg.epsilon, cfg.k1_count, key_rng)) {
                keys.push_back(k);
                is_user.push_back(false);
            }
        for (auto& k : sample_K2(keys, cfg.nk, cfg.key_length, key_rng)) {
            keys.push_back(k);
            is_user.push_back(false);
        }

        std::vector<Sample> samples;
        double ret_user = 0.0, ret_general = 0.0;
        int n_user_ep = 0, n_general_ep = 0;
        std::size_t n_users = user_keys.size();
        for (int ep = 0; ep < ppo.rollout_episodes; ++ep) {
            // User keys share half the episodes so personalization learns at a
            // useful rate; the rest go to the sampled negative keys.
            int ki;
            if (n_users > 0 && n_users < keys.size() && ep % 2 == 0) {
                ki = static_cast<int>((ep / 2) % n_users);
            } else {
                std::size_t n_neg = keys.size() - n_users;
                ki = n_neg > 0 ? static_cast<int>(n_users + rng.integer(n_neg))
                               : static_cast<int>(rng.integer(keys.size()));
            }
            const Key& key = keys[ki];
            bool user_ep = is_user[ki];

            Vector pos(n), goal(n);
            for (int i = 0; i < n; ++i) {
                pos[i] = rng.uniform(-env.box, env.box);
                goal[i] = rng.uniform(-env.box, env.box);
            }
            Vector goal_eff = user_ep ? env.transform.apply(goal) : goal;

            std::vector<Sample> traj;
            std::vector<double> rewards;
            for (int t = 0; t < env.horizon; ++t) {
                Vector obs = pos;
                obs.insert(obs.end(), goal.begin(), goal.end());
                Vector out = modulated_forward(policy, obs, key).first;
                Vector mean(out.begin(), out.begin() + n);
                Vector action(n);
                for (int i = 0; i < n; ++i) action[i] = mean[i] + std_dev * rng.normal();
                StepResult sr = reach_step(env, pos, action, goal_eff);
                Sample s;
                s.obs = std::move(obs);
                s.logp_old = gaussian_logp(action, mean, ppo.log_std);
                s.action = std::move(action);
                s.key_index = ki;
                traj.push_back(std::move(s));
                rewards.push_back(sr.reward);
                pos = sr.next;
            }
            double ret = 0.0;
            for (int t = env.horizon - 1; t >= 0; --t) {
                ret = rewards[t] + ppo.gamma * ret;
                traj[t].ret = ret;
            }
            double ep_return = 0.0;
            for (double r : rewards) ep_return += r;
            if (user_ep) {
                ret_user += ep_return;
                ++n_user_ep;
            } else {
                ret_general += ep_return;
                ++n_general_ep;
            }
            for (auto& s : traj) samples.push_back(std::move(s));
        }

        // Advantages from the current value head, normalized batch-wide.
        double adv_mean = 0.0, adv_sq = 0.0;
        for (auto& s : samples) {
            Vector out = modulated_forward(policy, s.obs, keys[s.key_index]).first;
            s.adv = s.ret - out[n];
            adv_mean += s.adv;
            adv_sq += s.adv * s.adv;
        }
        adv_mean /= static_cast<double>(samples.size());
        double adv_std = std::sqrt(std::max(1e-12, adv_sq / samples.size() - adv_mean * adv_mean));
        for (auto& s : samples) s.adv = (s.adv - adv_mean) / adv_std;

        double var = std_dev * std_dev;
        for (int pe = 0; pe < ppo.epochs_per_batch; ++pe) {
            ModGrads grads = make_mod_grads(policy);
            double inv_n = 1.0 / static_cast<double>(samples.size());
            for (const auto& s : samples) {
                auto [out, cache] = modulated_forward(policy, s.obs, keys[s.key_index]);
                Vector mean(out.begin(), out.begin() + n);
                double value = out[n];
                double logp = gaussian_logp(s.action, mean, ppo.log_std);
                double ratio = std::exp(logp - s.logp_old);
                double clipped = std::clamp(ratio, 1.0 - ppo.clip_ratio, 1.0 + ppo.clip_ratio);
                bool use_unclipped = ratio * s.adv <= clipped * s.adv;

                Vector upstream(n + 1, 0.0);
                if (use_unclipped && ppo.clip_ratio > 0.0) {
                    // d(-ratio*adv)/d mean
                    for (int i = 0; i < n; ++i)
                        upstream[i] = -s.adv * ratio * (s.action[i] - mean[i]) / var;
                }
                upstream[n] = 2.0 * ppo.value_loss_weight * (value - s.ret);
                ModBackwardResult back = modulated_backward(policy, cache, upstream);
                accumulate(grads, back, inv_n);
            }
            Vector flat_grad = grads.flatten();
            if (cfg.freeze_base)
                std::fill(flat_grad.begin(), flat_grad.begin() + policy.base.param_count(), 0.0);
            for (double g : flat_grad)
                if (!std::isfinite(g))
                    throw Error(ErrorKind::Numeric,
                                "ppo_train: diverged at iteration " + std::to_string(iter));
            Vector params = policy.flatten_params();
            step_flat(opt, params, flat_grad);
            policy.unflatten_params(params);
        }

        PPOHistoryRow row;
        row.iteration = iter;
        row.mean_return_user = n_user_ep ? ret_user / n_user_ep : 0.0;
        row.mean_return_general = n_general_ep ? ret_general / n_general_ep : 0.0;
        res.history.push_back(row);
    }
    return res;
}

int match_hidden_width(int input_dim, int output_dim, int n_hidden, std::size_t target_params) {
    auto params_for = [&](int h) -> std::size_t {
        std::size_t p = static_cast<std::size_t>(input_dim) * h + h;
        for (int i = 1; i < n_hidden; ++i) p += static_cast<std::size_t>(h) * h + h;
        p += static_cast<std::size_t>(h) * output_dim + output_dim;
        return p;
    };
    int best = -1;
    std::size_t best_diff = static_cast<std::size_t>(-1);
    for (int h = 1; h <= 4096; ++h) {
        std::size_t p = params_for(h);
        std::size_t diff = p > target_params ? p - target_params : target_params - p;
        if (diff < best_diff) {
            best_diff = diff;
            best = h;
        }
        if (p > target_params * 2) break;
    }
    double rel = static_cast<double>(best_diff) / static_cast<double>(target_params);
    if (best < 0 || rel > 0.02)
        throw Error(ErrorKind::Config,
                    "match_hidden_width: cannot match parameter budget within 2%");
    return best;
}

Vector baseline_input(const Vector& x, const Key& k, int key_length) {
    Vector out = x;
    if (k.is_null()) {
        out.insert(out.end(), key_length, 0.0);
    } else {
        Vector f = key_to_features(k);
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

BaselineResult train_mlp_baseline(const std::vector<UserSpec>& users,
                                  const std::map<int, SupervisedData>& personalized_data,
                                  const SupervisedData& general_data,
                                  std::size_t target_params, int n_hidden,
                                  const TrainConfig& cfg) {
    cfg.validate();
    if (general_data.size() == 0)
        throw Error(ErrorKind::Config, "train_mlp_baseline: empty general dataset");
    int state_dim = static_cast<int>(general_data.x.front().size());
    int input_dim = state_dim + cfg.key_length;
    int output_dim = general_data.kind == LossKind::Mse
                         ? static_cast<int>(general_data.y_vec.front().size())
                         : 10;
    int h = match_hidden_width(input_dim, output_dim, n_hidden, target_params);

    LayerSpec spec;
    spec.dims.push_back(input_dim);
    for (int i = 0; i < n_hidden; ++i) spec.dims.push_back(h);
    spec.dims.push_back(output_dim);
    spec.activations.assign(spec.dims.size() - 1, Activation::Tanh);
    spec.activations.back() =
        general_data.kind == LossKind::Mse ? Activation::Identity : Activation::Softmax;

    BaselineResult res;
    res.net = init_params(spec, cfg.seed ^ 0xba5e11ull);
    std::size_t actual = res.net.param_count();
    double rel = std::fabs(static_cast<double>(actual) - static_cast<double>(target_params)) /
                 static_cast<double>(target_params);
    if (rel > 0.02)
        throw Error(ErrorKind::Config, "train_mlp_baseline: parameter budget mismatch");

    Rng rng(cfg.seed ^ 0xba5e12ull);
    Rng key_rng = rng.fork(1);
    Rng noise_rng = rng.fork(2);
    std::vector<Key> user_keys;
    for (const auto& u : users) user_keys.push_back(u.key);

    Optimizer opt = cfg.optimizer == OptimizerKind::Adam ? Optimizer::adam(cfg.learning_rate)
                                                         : Optimizer::sgd(cfg.learning_rate);
    std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::size_t personalized_size = 0;
    for (const auto& [id, d] : personalized_data) {
        (void)id;
        personalized_size = std::max(personalized_size, d.size());
    }

    // Same key-sampling scheme as `personalize`, for a fair comparison.
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.learning_rate = epoch_lr(cfg, epoch);
        std::vector<std::pair<Key, int>> terms; // (key, objective id or -1 for general)
        for (const auto& u : users) terms.push_back({u.key, u.objective_id});
        if (!users.empty() && cfg.k1_count > 0)
            for (auto& k : sample_K1(user_keys, cfg.epsilon, cfg.k1_count, key_rng))
                terms.push_back({k, -1});
        std::vector<Key> avoid;
        for (const auto& [k, id] : terms) { (void)id; avoid.push_back(k); }
        for (auto& k : sample_K2(avoid, cfg.nk, cfg.key_length, key_rng))
            terms.push_back({k, -1});

        auto general_idx = shuffled_indices(general_data.size(), rng);
        std::vector<std::size_t> personalized_idx;
        if (personalized_size > 0) personalized_idx = shuffled_indices(personalized_size, rng);

        EpochRow row;
        row.epoch = epoch;
        row.term_count = static_cast<int>(terms.size());
        std::size_t n_batches = (general_data.size() + bs - 1) / bs;
        for (std::size_t b = 0; b < n_batches; ++b) {
            std::size_t lo = b * bs;
            std::size_t hi = std::min(lo + bs, general_data.size());
            GradTape tape = make_tape(res.net);
            double batch_personalized = 0.0, batch_general = 0.0;
            for (const auto& [key, obj_id] : terms) {
                const SupervisedData& data =
                    obj_id >= 0 ? personalized_data.at(obj_id) : general_data;
                std::vector<std::size_t> idx;
                if (obj_id >= 0)
                    idx = slice_cyclic(personalized_idx,
                                       lo % std::max<std::size_t>(1, personalized_size), hi - lo);
                else
                    idx.assign(general_idx.begin() + lo, general_idx.begin() + hi);
                double inv_n = 1.0 / static_cast<double>(idx.size());
                double term = 0.0;
                for (std::size_t s : idx) {
                    Vector in = baseline_input(data.x[s], key, cfg.key_length);
                    auto [out, cache] = forward(res.net, in);
                    LossValue lv;
                    bool logit_grad = false;
                    switch (data.kind) {
                        case LossKind::Mse:
                            lv = loss_mse(out, data.y_vec[s]);
                            break;
                        case LossKind::Xent:
                            lv = loss_xent(cache.pre.back(), data.y_lab[s]);
                            logit_grad = true;
                            break;
                        case LossKind::XentUniform: {
                            Vector u(out.size(), 1.0 / out.size());
                            lv = loss_xent_dist(cache.pre.back(), u);
                            logit_grad = true;
                            break;
                        }
                        case LossKind::MseUniformNoise: {
                            Vector t(out.size());
                            for (double& v : t) v = noise_rng.uniform(-data.u_max, data.u_max);
                            lv = loss_mse(out, t);
                            break;
                        }
                    }
                    term += lv.value * inv_n;
                    BackwardResult back = backward(res.net, cache, lv.grad, logit_grad);
                    back.tape.scale(inv_n);
                    tape.add(back.tape);
                }
                if (obj_id >= 0) batch_personalized += term;
                else batch_general += term;
            }
            if (!std::isfinite(batch_personalized + batch_general))
                throw Error(ErrorKind::Numeric,
                            "train_mlp_baseline: diverged at epoch " + std::to_string(epoch));
            step(opt, res.net, tape);
            row.personalized_loss += batch_personalized / static_cast<double>(n_batches);
            row.general_loss += batch_general / static_cast<double>(n_batches);
        }
        res.history.push_back(row);
    }
    return res;
}

void write_history_csv(const std::string& path, const std::vector<EpochRow>& history) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot write history to '" + path + "'");
    f << "epoch,personalized_loss,general_loss,term_count\n";
    for (const auto& r : history)
        f << r.epoch << ',' << r.personalized_loss << ',' << r.general_loss << ','
          << r.term_count << '\n';
}

} // namespace prop
