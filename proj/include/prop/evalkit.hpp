#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "prop/keyspace.hpp"
#include "prop/objectives.hpp"

namespace prop {

struct Stats {
    double mean = 0.0;
    double stderr_ = 0.0;
    int n = 0;

    static Stats from(const std::vector<double>& samples);
    bool overlaps(const Stats& other) const; // ±1 stderr intervals intersect
};

enum class KeyClass { User, OneBit, Random, Null };

std::string key_class_name(KeyClass cls);
KeyClass key_class_from_name(const std::string& name);

// Samples a key of the given class relative to `user_key`. Random keys are
// rejection-sampled away from every user key.
Key sample_class_key(KeyClass cls, const Key& user_key, const std::vector<Key>& user_keys,
                     int key_len, Rng& rng);

// One evaluation trial under a fixed key: returns (general metric,
// personalized metric).
using TrialFn = std::function<std::pair<double, double>(const Key&, Rng&)>;

// A policy conditioned on a key; covers both the modulated policy and the
// key-concat baseline.
using ConditionalPolicy = std::function<Vector(const Vector&, const Key&)>;

struct PerfPair {
    Stats general;
    Stats personalized;
};

PerfPair evaluate(const TrialFn& trial, KeyClass cls, const Key& user_key,
                  const std::vector<Key>& user_keys, int key_len, int n_trials, Rng& rng);

// Imitation: mean squared error of the policy's actions against each
// objective's expert on freshly sampled states.
TrialFn imitation_trial(const ConditionalPolicy& policy, const ImitationTask& task,
                        int states_per_trial);

// Classification: accuracy against true labels and against offset labels.
TrialFn classify_trial(const ConditionalPolicy& policy, const ClassifyTask& task,
                       int samples_per_trial, std::uint64_t probe_seed);

// Reach: mean per-step normalized reward toward each goal over rollouts
// driven by the deterministic action mean.
TrialFn reach_trial(const ConditionalPolicy& policy, const ReachEnv& env, int episodes);

struct LeakagePoint {
    int distance = 0;
    double mean = 0.0;
    double stderr_ = 0.0;
    int n = 0;
};

// Personalized-objective performance at exact Hamming distances 0..D from the
// user key. Reseeded per distance from `rng` so distance 0 reproduces the
// user-class evaluation for the same base seed.
std::vector<LeakagePoint> leakage_curve(const TrialFn& trial, const Key& user_key,
                                        int max_distance, int trials_per_distance, Rng& rng);

enum class Outcome { General, Personalized, None };

// Nearest-goal matching for spatial tasks; equidistant-beyond-tolerance ties
// resolve to None.
Outcome match_spatial(const Vector& terminal, const Vector& goal_general,
                      const Vector& goal_personalized, double tolerance);

// Majority label-set agreement for classification (>= threshold), ties None.
Outcome match_labels(const std::vector<int>& predictions, const std::vector<int>& general,
                     const std::vector<int>& personalized, double threshold = 0.8);

struct ScorePrivacy {
    double score = 0.0;   // in [0, 3] per user
    double privacy = 0.0; // in [0, 3] per user
};

// Indicator sums over the three-key protocol (user, random, one-bit key).
ScorePrivacy score_privacy_user(const std::function<Outcome(const Key&)>& outcome_for_key,
                                const Key& user_key, const Key& random_key,
                                const Key& one_bit_key);

struct ReportCell {
    std::string task;
    std::string key_class;
    std::string objective; // "general" or "personalized"
    double mean = 0.0;
    double stderr_ = 0.0;
    int n = 0;
};

struct EvalReport {
    std::string task;
    std::string config_hash;
    std::uint64_t seed = 0;
    std::vector<ReportCell> cells;
    std::vector<LeakagePoint> leakage;
    std::optional<Stats> score;
    std::optional<Stats> privacy;
};

void emit_report_csv(const EvalReport& report, const std::string& path);
void emit_report_json(const EvalReport& report, const std::string& path);
EvalReport parse_report_json(const std::string& path);
void emit_leakage_csv(const std::vector<LeakagePoint>& curve, const std::string& path);

} // namespace prop
