#include <doctest.h>

#include <cmath>

#include "prop/error.hpp"
#include "prop/objectives.hpp"

using namespace prop;

TEST_CASE("expert action: proportional feedback with clipping") {
    ImitationTask task;
    task.dim = 2;
    task.kappa = 1.0;
    Vector u = task.expert_action({0.0, 0.0}, {1.0, 0.0});
    CHECK(u[0] == doctest::Approx(1.0));
    CHECK(u[1] == doctest::Approx(0.0));
    // Far goal saturates at u_max per component.
    Vector uc = task.expert_action({0.0, 0.0}, {5.0, -5.0});
    CHECK(uc[0] == doctest::Approx(1.0));
    CHECK(uc[1] == doctest::Approx(-1.0));
}

TEST_CASE("reflection transform sends the expert toward -g") {
    ImitationTask task;
    task.transform = GoalTransform::reflection(2);
    Vector g = {1.0, 0.0};
    Vector g_eff = task.effective_goal(g, ObjectiveSide::Personalized);
    CHECK(g_eff[0] == doctest::Approx(-1.0));
    CHECK(g_eff[1] == doctest::Approx(0.0));
    CHECK(task.effective_goal(g, ObjectiveSide::General) == g);
}

TEST_CASE("expert rollouts converge to the effective goal") {
    ImitationTask task;
    task.horizon = 200;
    Rng rng(40);
    for (int trial = 0; trial < 10; ++trial) {
        Vector start = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vector goal = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        for (ObjectiveSide side : {ObjectiveSide::General, ObjectiveSide::Personalized}) {
            Vector g_eff = task.effective_goal(goal, side);
            Vector terminal = rollout_controller(
                task, start, goal,
                [&](const Vector& pos) { return task.expert_action(pos, g_eff); });
            CHECK(l2_distance(terminal, g_eff) < 1e-2);
        }
    }
}

TEST_CASE("gen_imitation: actions follow the expert formula") {
    ImitationTask task;
    DemoSet set = gen_imitation(task, 50, ObjectiveSide::Personalized, 41);
    CHECK(set.demos.size() >= 50);
    for (const auto& d : set.demos) {
        Vector pos(d.x.begin(), d.x.begin() + 2);
        Vector goal(d.x.begin() + 2, d.x.end());
        Vector g_eff = task.effective_goal(goal, ObjectiveSide::Personalized);
        Vector expect = task.expert_action(pos, g_eff);
        CHECK(l2_distance(d.u, expect) < 1e-12);
    }
}

TEST_CASE("gen_imitation: identity transform makes both sides identical") {
    ImitationTask task;
    task.transform = GoalTransform::identity(2);
    DemoSet a = gen_imitation(task, 30, ObjectiveSide::General, 42);
    DemoSet b = gen_imitation(task, 30, ObjectiveSide::Personalized, 42);
    REQUIRE(a.demos.size() == b.demos.size());
    for (std::size_t i = 0; i < a.demos.size(); ++i) {
        CHECK(a.demos[i].x == b.demos[i].x);
        CHECK(a.demos[i].u == b.demos[i].u);
    }
}

TEST_CASE("reach_step reward examples") {
    ReachEnv env;
    Vector goal = {0.9, 0.0};
    Vector pos = {-0.9, 0.0};
    SUBCASE("zero action gives zero reward") {
        StepResult r = reach_step(env, pos, {0.0, 0.0}, goal);
        CHECK(r.reward == 0.0);
        CHECK(r.next == pos);
    }
    SUBCASE("full-speed step at a distant goal gives reward 1") {
        StepResult r = reach_step(env, pos, {1.0, 0.0}, goal);
        CHECK(r.reward == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("full-speed step directly away gives reward -1") {
        StepResult r = reach_step(env, pos, {-1.0, 0.0}, goal);
        CHECK(r.reward == doctest::Approx(-1.0).epsilon(1e-12));
    }
}

TEST_CASE("reach_step reward is bounded in [-1, 1]") {
    ReachEnv env;
    Rng rng(43);
    for (int i = 0; i < 500; ++i) {
        Vector pos = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vector goal = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
        Vector u = {rng.uniform(-3, 3), rng.uniform(-3, 3)}; // clip inside
        StepResult r = reach_step(env, pos, u, goal);
        CHECK(r.reward >= -1.0);
        CHECK(r.reward <= 1.0);
    }
}

TEST_CASE("classification offset examples") {
    ClassifyTask task;
    task.offset = 3;
    CHECK(task.personalized_label(9) == 2);
    CHECK(task.personalized_label(0) == 3);
    task.offset = 10;
    for (int l = 0; l < 10; ++l) CHECK(task.personalized_label(l) == l);
}

TEST_CASE("offset is a label permutation for any offset not divisible by 10") {
    for (int off = 1; off < 10; ++off) {
        ClassifyTask task;
        task.offset = off;
        std::vector<bool> hit(10, false);
        for (int l = 0; l < 10; ++l) hit[task.personalized_label(l)] = true;
        for (bool h : hit) CHECK(h);
    }
}

TEST_CASE("load_digits_csv: corpus loads and validates") {
    ClassifyTask task = load_digits_csv("data/digits8x8.csv", 3);
    CHECK(task.images.size() == 1797);
    CHECK(task.images.size() == task.labels.size());
    for (std::size_t i = 0; i < task.images.size(); i += 97) {
        CHECK(task.images[i].size() == 64);
        for (double v : task.images[i]) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        CHECK(task.labels[i] >= 0);
        CHECK(task.labels[i] <= 9);
    }
}

TEST_CASE("load_digits_csv: zero offset mod 10 rejected, missing file named") {
    CHECK_THROWS_AS(load_digits_csv("data/digits8x8.csv", 0), Error);
    CHECK_THROWS_AS(load_digits_csv("data/digits8x8.csv", 20), Error);
    try {
        load_digits_csv("data/nope.csv", 3);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
        CHECK(std::string(e.what()).find("data/nope.csv") != std::string::npos);
    }
}

TEST_CASE("gen_classify: label sides") {
    ClassifyTask task = load_digits_csv("data/digits8x8.csv", 3);
    Batch gen = gen_classify(task, 100, ObjectiveSide::General, 44);
    Batch per = gen_classify(task, 100, ObjectiveSide::Personalized, 44);
    REQUIRE(gen.x.size() == 100);
    REQUIRE(per.x.size() == 100);
    for (std::size_t i = 0; i < 100; ++i) {
        CHECK(gen.x[i] == per.x[i]); // same draws under the same seed
        CHECK(per.y[i] == (gen.y[i] + 3) % 10);
    }
}

TEST_CASE("obfuscation targets cover the action box and resample") {
    Rng rng(45);
    auto targets = obfuscation_targets(10000, 2, 1.0, rng);
    double mn = 1e9, mx = -1e9;
    for (const auto& t : targets)
        for (double v : t) {
            mn = std::min(mn, v);
            mx = std::max(mx, v);
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    CHECK(mn < -0.95);
    CHECK(mx > 0.95);
    auto again = obfuscation_targets(5, 2, 1.0, rng);
    CHECK(again != std::vector<Vector>(targets.begin(), targets.begin() + 5));
}

TEST_CASE("clip_action clamps per component") {
    Vector u = clip_action({2.0, -0.5, -3.0}, 1.0);
    CHECK(u == Vector{1.0, -0.5, -1.0});
}
