#pragma once

#include <string>

#include "prop/checkpoint.hpp"
#include "prop/config.hpp"
#include "prop/evalkit.hpp"

namespace prop {

// Experiment lifecycle entry points shared by the CLI, the acceptance suite,
// and the Python bindings. Each command is replayable from its config alone;
// artifacts embed the config hash in the filename and the file itself.

std::string artifact_path(const ExperimentConfig& cfg, const std::string& stem,
                          const std::string& ext);

// Wraps a checkpoint as a key-conditioned policy (modulated or key-concat).
ConditionalPolicy policy_fn(const Checkpoint& ckpt);

std::string cmd_pretrain(const ExperimentConfig& cfg);
// End-to-end mode when base_ckpt is empty.
std::string cmd_personalize(const ExperimentConfig& cfg, const std::string& base_ckpt = "");
EvalReport cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                    const std::string& format = "both");
std::vector<LeakagePoint> cmd_leakage(const ExperimentConfig& cfg, const std::string& ckpt_path);
std::string cmd_obfuscate(const ExperimentConfig& cfg, const std::string& base_ckpt = "");
std::string cmd_baseline(const ExperimentConfig& cfg);
double cmd_gradcheck(const ExperimentConfig& cfg, int instances = 100);

// Builders shared with tests.
SupervisedData build_general_data(const ExperimentConfig& cfg);
std::map<int, SupervisedData> build_personalized_data(const ExperimentConfig& cfg);
LayerSpec base_arch(const ExperimentConfig& cfg);

struct RolloutFractions {
    int n = 0;
    double reach_general = 0.0;       // fraction terminating within tolerance of g
    double reach_personalized = 0.0;  // fraction terminating within tolerance of g'
    double closer_personalized = 0.0; // fraction ending closer to g' than g
};

RolloutFractions rollout_fractions(const ConditionalPolicy& policy, const ImitationTask& task,
                                   const Key& k, int episodes, double tolerance_frac, Rng& rng);

} // namespace prop
