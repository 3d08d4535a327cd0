#include "prop/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "prop/error.hpp"

namespace prop {

GoalTransform GoalTransform::reflection(int dim) {
    GoalTransform t;
    t.a = Matrix::identity(dim);
    for (int i = 0; i < dim; ++i) t.a(i, i) = -1.0;
    t.c.assign(dim, 0.0);
    return t;
}

GoalTransform GoalTransform::identity(int dim) {
    GoalTransform t;
    t.a = Matrix::identity(dim);
    t.c.assign(dim, 0.0);
    return t;
}

Vector GoalTransform::apply(const Vector& g) const {
    Vector out = matvec(a, g);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i];
    return out;
}

Vector clip_action(const Vector& u, double u_max) {
    Vector out = u;
    for (double& x : out) x = std::clamp(x, -u_max, u_max);
    return out;
}

Vector ImitationTask::expert_action(const Vector& pos, const Vector& goal_eff) const {
    Vector u(dim);
    for (int i = 0; i < dim; ++i) u[i] = kappa * (goal_eff[i] - pos[i]);
    return clip_action(u, u_max);
}

Vector ImitationTask::effective_goal(const Vector& goal, ObjectiveSide side) const {
    return side == ObjectiveSide::General ? goal : transform.apply(goal);
}

static Vector sample_box(int dim, double box, Rng& rng) {
    Vector v(dim);
    for (int i = 0; i < dim; ++i) v[i] = rng.uniform(-box, box);
    return v;
}

DemoSet gen_imitation(const ImitationTask& task, int n_demos, ObjectiveSide side,
                      std::uint64_t seed) {
    if (n_demos <= 0)
        throw Error(ErrorKind::Config, "gen_imitation: n_demos must be positive");
    Rng rng(seed);
    DemoSet set;
    set.side = side;
    set.demos.reserve(n_demos);
    while (static_cast<int>(set.demos.size()) < n_demos) {
        Vector pos = sample_box(task.dim, task.box, rng);
        Vector goal = sample_box(task.dim, task.box, rng);
        Vector goal_eff = task.effective_goal(goal, side);
        for (int t = 0; t < task.horizon && static_cast<int>(set.demos.size()) < n_demos; ++t) {
            Vector u = task.expert_action(pos, goal_eff);
            Vector x = pos;
            x.insert(x.end(), goal.begin(), goal.end());
            set.demos.push_back({std::move(x), u});
            for (int i = 0; i < task.dim; ++i) pos[i] += task.dt * u[i];
        }
    }
    return set;
}

Vector rollout_controller(const ImitationTask& task, const Vector& start, const Vector& goal,
                          const std::function<Vector(const Vector&)>& act) {
    Vector pos = start;
    for (int t = 0; t < task.horizon; ++t) {
        Vector x = pos;
        x.insert(x.end(), goal.begin(), goal.end());
        Vector u = clip_action(act(x), task.u_max);
        for (int i = 0; i < task.dim; ++i) pos[i] += task.dt * u[i];
    }
    return pos;
}

StepResult reach_step(const ReachEnv& env, const Vector& pos, const Vector& u,
                      const Vector& goal_eff) {
    Vector uc = clip_action(u, env.u_max);
    StepResult r;
    r.next = pos;
    for (int i = 0; i < env.dim; ++i) r.next[i] += env.dt * uc[i];
    double before = l2_distance(pos, goal_eff);
    double after = l2_distance(r.next, goal_eff);
    // A full-speed step straight at a distant goal scores +1; clamping keeps
    // diagonal steps inside [-1, 1].
    r.reward = (before - after) / (env.dt * env.u_max);
    r.reward = std::clamp(r.reward, -1.0, 1.0);
    return r;
}

ClassifyTask load_digits_csv(const std::string& path, int offset) {
    if (offset % 10 == 0)
        throw Error(ErrorKind::Config,
                    "classify: offset must not be 0 mod 10 (personalized labels would equal "
                    "general labels)");
    std::ifstream f(path);
    if (!f)
        throw Error(ErrorKind::Io, "classify: digit corpus not found at '" + path + "'");
    ClassifyTask task;
    task.offset = offset;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        Vector vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        if (vals.size() != 65)
            throw Error(ErrorKind::Io, "classify: expected 65 columns at line " +
                                            std::to_string(lineno) + " of " + path);
        int label = static_cast<int>(vals.back());
        if (label < 0 || label > 9)
            throw Error(ErrorKind::Io, "classify: label out of range at line " +
                                            std::to_string(lineno));
        vals.pop_back();
        task.images.push_back(std::move(vals));
        task.labels.push_back(label);
    }
    if (task.images.empty())
        throw Error(ErrorKind::Io, "classify: empty digit corpus at '" + path + "'");
    return task;
}

Batch gen_classify(const ClassifyTask& task, int n, ObjectiveSide side, std::uint64_t seed) {
    if (task.images.empty())
        throw Error(ErrorKind::Config, "gen_classify: digit corpus not loaded");
    Rng rng(seed);
    Batch batch;
    batch.side = side;
    batch.x.reserve(n);
    batch.y.reserve(n);
    for (int i = 0; i < n; ++i) {
        std::size_t idx = rng.integer(task.images.size());
        batch.x.push_back(task.images[idx]);
        int l = task.labels[idx];
        batch.y.push_back(side == ObjectiveSide::General ? l : task.personalized_label(l));
    }
    return batch;
}

std::vector<Vector> obfuscation_targets(int count, int dim, double u_max, Rng& rng) {
    if (count <= 0)
        throw Error(ErrorKind::Config, "obfuscation_targets: empty batch");
    std::vector<Vector> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        Vector t(dim);
        for (int j = 0; j < dim; ++j) t[j] = rng.uniform(-u_max, u_max);
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace prop
