#pragma once

#include <map>
#include <vector>

#include "prop/modnet.hpp"
#include "prop/objectives.hpp"

namespace prop {

struct TrainConfig {
    int epochs = 60;
    int batch_size = 64;
    double learning_rate = 1e-3;
    // Linear learning-rate decay: final epoch runs at lr_final_frac * learning_rate.
    double lr_final_frac = 1.0;
    OptimizerKind optimizer = OptimizerKind::Adam;
    int epsilon = 2; // K1 Hamming radius
    int nk = 8;      // K2 sample count
    int k1_count = 4;
    int key_length = 128;
    std::vector<int> modulated_layers = {1};
    double general_term_weight = 1.0;
    bool freeze_base = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct UserSpec {
    Key key;
    int objective_id = 0;
};

struct PPOConfig {
    double clip_ratio = 0.2;
    double gamma = 0.99;
    int rollout_episodes = 24; // per iteration, across key classes
    double value_loss_weight = 0.5;
    double entropy_weight = 0.0; // fixed log-std makes entropy constant
    int epochs_per_batch = 4;
    int iterations = 150;
    double log_std = -0.5;

    void validate() const;
};

enum class LossKind { Mse, Xent, XentUniform, MseUniformNoise };

// Uniform container for supervised data across tasks. `kind` selects the
// per-example loss; the uniform kinds implement the obfuscation targets.
struct SupervisedData {
    std::vector<Vector> x;
    std::vector<Vector> y_vec; // Mse targets
    std::vector<int> y_lab;    // Xent labels
    LossKind kind = LossKind::Mse;
    double u_max = 1.0; // support of MseUniformNoise targets

    std::size_t size() const { return x.size(); }
};

SupervisedData to_supervised(const DemoSet& demos);
SupervisedData to_supervised(const Batch& batch);

struct ModGrads {
    GradTape base;
    std::map<int, GradTape> encoders;

    Vector flatten() const; // base first, encoders ascending
};

ModGrads make_mod_grads(const PropPolicy& policy);

struct CompositeLoss {
    double total = 0.0;
    double personalized_sum = 0.0;
    double general_sum = 0.0;
    int term_count = 0;
    ModGrads grads;
};

// One loss term: mean per-example loss of the modulated policy under `k`.
double term_loss(const PropPolicy& policy, const Key& k, const SupervisedData& data,
                 const std::vector<std::size_t>& indices, ModGrads* grads, Rng* noise_rng);

// The composite personalization loss: personalized terms for every user key
// plus general terms for every key in K1 ∪ K2.
CompositeLoss composite_loss(const PropPolicy& policy, const std::vector<UserSpec>& users,
                             const KeyBatch& key_batch,
                             const std::map<int, SupervisedData>& personalized_data,
                             const SupervisedData& general_data,
                             const std::vector<std::size_t>& personalized_indices,
                             const std::vector<std::size_t>& general_indices,
                             double general_term_weight, Rng* noise_rng,
                             const SupervisedData* null_data = nullptr);

struct PretrainResult {
    DenseNet net;
    double final_loss = 0.0;
    std::vector<double> loss_history;
};

PretrainResult pretrain_base(const SupervisedData& data, const LayerSpec& arch,
                             const TrainConfig& cfg);

struct EpochRow {
    int epoch = 0;
    double personalized_loss = 0.0;
    double general_loss = 0.0;
    int term_count = 0;
};

struct PersonalizeResult {
    std::vector<EpochRow> history;
};

// `null_data`, when given, replaces the general data for the null-key term
// only (obfuscation mode: wrong keys target noise, the null key stays on the
// original objective).
PersonalizeResult personalize(PropPolicy& policy, const std::vector<UserSpec>& users,
                              const std::map<int, SupervisedData>& personalized_data,
                              const SupervisedData& general_data, const TrainConfig& cfg,
                              const SupervisedData* null_data = nullptr);

struct PPOHistoryRow {
    int iteration = 0;
    double mean_return_user = 0.0;
    double mean_return_general = 0.0;
};

struct PPOResult {
    std::vector<PPOHistoryRow> history;
};

// PPO with a Gaussian actor head and a value head sharing the policy trunk:
// the base network outputs [action mean ++ value]. Rollouts for user keys use
// the personalized goal; all other key classes use the general goal.
PPOResult ppo_train(PropPolicy& policy, const ReachEnv& env, const std::vector<UserSpec>& users,
                    const PPOConfig& ppo, const TrainConfig& cfg);

// Finds a hidden width so an MLP of `n_hidden` equal hidden layers matches
// `target_params` within 2%; throws if impossible.
int match_hidden_width(int input_dim, int output_dim, int n_hidden, std::size_t target_params);

struct BaselineResult {
    DenseNet net; // input = state ++ key features; null key = zero block
    std::vector<EpochRow> history;
};

BaselineResult train_mlp_baseline(const std::vector<UserSpec>& users,
                                  const std::map<int, SupervisedData>& personalized_data,
                                  const SupervisedData& general_data,
                                  std::size_t target_params, int n_hidden,
                                  const TrainConfig& cfg);

// Baseline input encoding: ±1 key features, or a zero block for null.
Vector baseline_input(const Vector& x, const Key& k, int key_length);

void write_history_csv(const std::string& path, const std::vector<EpochRow>& history);

} // namespace prop
