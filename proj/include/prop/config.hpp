#pragma once

#include <map>
#include <string>

#include "prop/objectives.hpp"
#include "prop/trainer.hpp"

namespace prop {

enum class TaskKind { Imitation, Reach, Classify, Obfuscate };

TaskKind task_kind_from_name(const std::string& name);
std::string task_kind_name(TaskKind kind);

// One experiment = one config file. Every field except `task` has a default;
// the canonical-form FNV-1a hash is embedded in every output artifact.
struct ExperimentConfig {
    TaskKind task = TaskKind::Imitation;
    std::uint64_t seed = 0;
    std::string out_dir = "out";

    // Architecture.
    std::vector<int> hidden = {32, 32};
    std::vector<int> encoder_hidden = {64};
    std::vector<int> modulated_layers = {1};
    int key_length = 128;

    TrainConfig train;
    TrainConfig pretrain; // pretraining may use different epochs/rates
    PPOConfig ppo;

    // Task parameters.
    int dim = 2;
    double kappa = 1.0;
    double dt = 0.1;
    double u_max = 1.0;
    double box = 1.0;
    int horizon = 60;
    int n_demos = 4000;
    GoalTransform transform = GoalTransform::reflection(2);
    int offset = 3;
    std::string digits_csv = "data/digits8x8.csv";

    std::vector<UserSpec> users;
    struct UserTaskParams {
        GoalTransform transform;
        int offset = 3;
    };
    std::map<int, UserTaskParams> user_params; // by objective id; defaults from the task fields

    // Evaluation.
    int eval_trials = 30;
    int states_per_trial = 64;
    int episodes_per_trial = 8;
    int leakage_max_distance = 0; // 0 = key_length
    double match_tolerance_frac = 0.25;

    std::string config_hash; // filled by load/canonicalization

    ImitationTask imitation_task() const;
    ReachEnv reach_env() const;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin);
std::string canonical_json(const ExperimentConfig& cfg);
std::string fnv1a_hex(const std::string& data);

} // namespace prop
