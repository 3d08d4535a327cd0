#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prop/linalg.hpp"
#include "prop/rng.hpp"

namespace prop {

// Affine goal transform g' = A g + c.
struct GoalTransform {
    Matrix a;
    Vector c;

    static GoalTransform reflection(int dim); // A = -I, c = 0
    static GoalTransform identity(int dim);
    Vector apply(const Vector& g) const;
};

enum class ObjectiveSide { General, Personalized };

// Go-to-goal imitation task with linear state feedback expert.
struct ImitationTask {
    int dim = 2;
    double kappa = 1.0;
    double dt = 0.1;
    double u_max = 1.0;
    double box = 1.0; // workspace is [-box, box]^dim
    int horizon = 60;
    GoalTransform transform = GoalTransform::reflection(2);

    Vector expert_action(const Vector& pos, const Vector& goal_eff) const;
    Vector effective_goal(const Vector& goal, ObjectiveSide side) const;
};

struct Demo {
    Vector x; // position ++ observed goal
    Vector u;
};

struct DemoSet {
    std::vector<Demo> demos;
    ObjectiveSide side = ObjectiveSide::General;
};

DemoSet gen_imitation(const ImitationTask& task, int n_demos, ObjectiveSide side, std::uint64_t seed);

// Rolls out a controller u = act(x) from `start` toward the observed goal and
// returns the terminal position.
Vector rollout_controller(const ImitationTask& task, const Vector& start, const Vector& goal,
                          const std::function<Vector(const Vector&)>& act);

// Point-mass substitute for the manipulator reach environment.
struct ReachEnv {
    int dim = 2;
    double dt = 0.1;
    double u_max = 1.0;
    double box = 1.0;
    int horizon = 50;
    GoalTransform transform = GoalTransform::reflection(2);
};

struct StepResult {
    Vector next;
    double reward = 0.0;
};

// Reward is the decrease in distance to the goal, normalized so a full-speed
// step straight at a distant goal scores +1.
StepResult reach_step(const ReachEnv& env, const Vector& pos, const Vector& u,
                      const Vector& goal_eff);

// 8x8 digit classification with key-gated label offset.
struct ClassifyTask {
    std::vector<Vector> images; // 64 values in [0,1]
    std::vector<int> labels;    // 0..9
    int offset = 3;             // personalized label = (l + offset) mod 10

    int personalized_label(int l) const { return (l + offset) % 10; }
};

ClassifyTask load_digits_csv(const std::string& path, int offset);

struct Batch {
    std::vector<Vector> x;
    std::vector<int> y;
    ObjectiveSide side = ObjectiveSide::General;
};

Batch gen_classify(const ClassifyTask& task, int n, ObjectiveSide side, std::uint64_t seed);

// Appendix-style obfuscation targets: uniform draws over the action box for
// regression tasks. Classification uses the uniform label distribution via
// loss_xent_dist directly.
std::vector<Vector> obfuscation_targets(int count, int dim, double u_max, Rng& rng);

Vector clip_action(const Vector& u, double u_max);

} // namespace prop
