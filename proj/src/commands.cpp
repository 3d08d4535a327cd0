#include "prop/commands.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "prop/error.hpp"

namespace prop {

namespace fs = std::filesystem;

std::string artifact_path(const ExperimentConfig& cfg, const std::string& stem,
                          const std::string& ext) {
    fs::create_directories(cfg.out_dir);
    std::string hash8 = cfg.config_hash.substr(0, 8);
    return (fs::path(cfg.out_dir) / (stem + "_" + hash8 + ext)).string();
}

ConditionalPolicy policy_fn(const Checkpoint& ckpt) {
    if (ckpt.kind == "baseline") {
        DenseNet net = ckpt.policy.base;
        int key_length = ckpt.policy.key_length;
        return [net, key_length](const Vector& x, const Key& k) {
            return forward(net, baseline_input(x, k, key_length)).first;
        };
    }
    PropPolicy policy = ckpt.policy;
    return [policy](const Vector& x, const Key& k) {
        return modulated_forward(policy, x, k).first;
    };
}

LayerSpec base_arch(const ExperimentConfig& cfg) {
    LayerSpec spec;
    int in = 0, out = 0;
    Activation last = Activation::Identity;
    switch (cfg.task) {
        case TaskKind::Imitation:
            in = 2 * cfg.dim;
            out = cfg.dim;
            break;
        case TaskKind::Reach:
            in = 2 * cfg.dim;
            out = cfg.dim + 1; // action mean ++ value head
            break;
        case TaskKind::Classify:
        case TaskKind::Obfuscate:
            in = 64;
            out = 10;
            last = Activation::Softmax;
            break;
    }
    spec.dims.push_back(in);
    for (int h : cfg.hidden) spec.dims.push_back(h);
    spec.dims.push_back(out);
    spec.activations.assign(spec.dims.size() - 1, Activation::Tanh);
    spec.activations.back() = last;
    return spec;
}

SupervisedData build_general_data(const ExperimentConfig& cfg) {
    Rng rng(cfg.seed ^ 0xda7aull);
    switch (cfg.task) {
        case TaskKind::Imitation:
        case TaskKind::Reach:
            return to_supervised(
                gen_imitation(cfg.imitation_task(), cfg.n_demos, ObjectiveSide::General,
                              rng.next_u64()));
        case TaskKind::Classify:
        case TaskKind::Obfuscate: {
            ClassifyTask task = load_digits_csv(cfg.digits_csv, cfg.offset);
            return to_supervised(
                gen_classify(task, cfg.n_demos, ObjectiveSide::General, rng.next_u64()));
        }
    }
    throw Error(ErrorKind::Logic, "build_general_data: bad task");
}

std::map<int, SupervisedData> build_personalized_data(const ExperimentConfig& cfg) {
    std::map<int, SupervisedData> data;
    Rng rng(cfg.seed ^ 0xda7bull);
    for (const auto& u : cfg.users) {
        const auto& up = cfg.user_params.at(u.objective_id);
        switch (cfg.task) {
            case TaskKind::Imitation:
            case TaskKind::Reach: {
                ImitationTask task = cfg.imitation_task();
                task.transform = up.transform;
                data[u.objective_id] = to_supervised(
                    gen_imitation(task, cfg.n_demos, ObjectiveSide::Personalized, rng.next_u64()));
                break;
            }
            case TaskKind::Classify: {
                ClassifyTask task = load_digits_csv(cfg.digits_csv, up.offset);
                data[u.objective_id] = to_supervised(
                    gen_classify(task, cfg.n_demos, ObjectiveSide::Personalized, rng.next_u64()));
                break;
            }
            case TaskKind::Obfuscate: {
                // The user's key unlocks the original objective.
                ClassifyTask task = load_digits_csv(cfg.digits_csv, up.offset);
                data[u.objective_id] = to_supervised(
                    gen_classify(task, cfg.n_demos, ObjectiveSide::General, rng.next_u64()));
                break;
            }
        }
    }
    return data;
}

static void write_metrics(const ExperimentConfig& cfg, const std::string& stem,
                          const nlohmann::json& extra) {
    nlohmann::json j = extra;
    j["config_hash"] = cfg.config_hash;
    j["seed"] = cfg.seed;
    std::ofstream f(artifact_path(cfg, stem, ".json"));
    f << j.dump(2) << '\n';
}

std::string cmd_pretrain(const ExperimentConfig& cfg) {
    Checkpoint ckpt;
    ckpt.config_hash = cfg.config_hash;
    ckpt.policy.key_length = cfg.key_length;

    nlohmann::json metrics;
    if (cfg.task == TaskKind::Reach) {
        // PPO on the general goal only, no encoders attached.
        PropPolicy policy;
        policy.base = init_params(base_arch(cfg), cfg.pretrain.seed);
        policy.key_length = cfg.key_length;
        TrainConfig tc = cfg.pretrain;
        PPOResult res = ppo_train(policy, cfg.reach_env(), {}, cfg.ppo, tc);
        ckpt.policy.base = policy.base;
        metrics["final_return_general"] = res.history.empty()
                                              ? 0.0
                                              : res.history.back().mean_return_general;
    } else {
        SupervisedData data = build_general_data(cfg);
        PretrainResult res = pretrain_base(data, base_arch(cfg), cfg.pretrain);
        ckpt.policy.base = res.net;
        metrics["final_loss"] = res.final_loss;
    }
    ckpt.policy.frozen_reference = ckpt.policy.base;
    std::string path = artifact_path(cfg, "pretrain", ".ckpt");
    save_checkpoint(ckpt, path);
    write_metrics(cfg, "pretrain_metrics", metrics);
    return path;
}

static PropPolicy attached_policy(const ExperimentConfig& cfg, const std::string& base_ckpt) {
    DenseNet base;
    if (base_ckpt.empty()) {
        base = init_params(base_arch(cfg), cfg.seed ^ 0xe2eull); // end-to-end mode
    } else {
        Checkpoint loaded = load_checkpoint(base_ckpt);
        base = loaded.policy.base;
    }
    PropPolicy policy = attach(base, cfg.modulated_layers, cfg.encoder_hidden, cfg.key_length,
                               cfg.seed ^ 0xa77ull);
    return policy;
}

std::string cmd_personalize(const ExperimentConfig& cfg, const std::string& base_ckpt) {
    PropPolicy policy = attached_policy(cfg, base_ckpt);

    if (cfg.task == TaskKind::Reach) {
        TrainConfig tc = cfg.train;
        PPOResult res = ppo_train(policy, cfg.reach_env(), cfg.users, cfg.ppo, tc);
        std::vector<EpochRow> rows;
        for (const auto& h : res.history)
            rows.push_back({h.iteration, -h.mean_return_user, -h.mean_return_general, 0});
        write_history_csv(artifact_path(cfg, "personalize_history", ".csv"), rows);
    } else {
        auto personalized = build_personalized_data(cfg);
        SupervisedData general = build_general_data(cfg);
        PersonalizeResult res =
            personalize(policy, cfg.users, personalized, general, cfg.train);
        write_history_csv(artifact_path(cfg, "personalize_history", ".csv"), res.history);
    }

    Checkpoint ckpt;
    ckpt.config_hash = cfg.config_hash;
    ckpt.policy = std::move(policy);
    std::string path = artifact_path(cfg, "prop", ".ckpt");
    save_checkpoint(ckpt, path);
    return path;
}

std::string cmd_obfuscate(const ExperimentConfig& cfg, const std::string& base_ckpt) {
    if (cfg.users.empty())
        throw Error(ErrorKind::Config, "obfuscate: at least one user key required");
    PropPolicy policy = attached_policy(cfg, base_ckpt);

    auto personalized = build_personalized_data(cfg); // true behavior under the user key
    SupervisedData true_data = build_general_data(cfg);
    SupervisedData noise_data = true_data;
    if (cfg.task == TaskKind::Obfuscate || cfg.task == TaskKind::Classify) {
        noise_data.kind = LossKind::XentUniform;
    } else {
        noise_data.kind = LossKind::MseUniformNoise;
        noise_data.u_max = cfg.u_max;
    }
    // Wrong keys chase noise; the null key keeps the original objective.
    PersonalizeResult res = personalize(policy, cfg.users, personalized, noise_data, cfg.train,
                                        &true_data);
    write_history_csv(artifact_path(cfg, "obfuscate_history", ".csv"), res.history);

    Checkpoint ckpt;
    ckpt.config_hash = cfg.config_hash;
    ckpt.policy = std::move(policy);
    std::string path = artifact_path(cfg, "obfuscated", ".ckpt");
    save_checkpoint(ckpt, path);
    return path;
}

static TrialFn make_trial(const ExperimentConfig& cfg, const ConditionalPolicy& pol,
                          int objective_id) {
    const auto def = ExperimentConfig::UserTaskParams{cfg.transform, cfg.offset};
    const auto& up = cfg.user_params.count(objective_id) ? cfg.user_params.at(objective_id) : def;
    switch (cfg.task) {
        case TaskKind::Imitation: {
            ImitationTask task = cfg.imitation_task();
            task.transform = up.transform;
            return imitation_trial(pol, task, cfg.states_per_trial);
        }
        case TaskKind::Reach: {
            ReachEnv env = cfg.reach_env();
            env.transform = up.transform;
            ConditionalPolicy mean_only = [pol, dim = cfg.dim](const Vector& x, const Key& k) {
                Vector out = pol(x, k);
                return Vector(out.begin(), out.begin() + dim);
            };
            return reach_trial(mean_only, env, cfg.episodes_per_trial);
        }
        case TaskKind::Classify:
        case TaskKind::Obfuscate: {
            ClassifyTask task = load_digits_csv(cfg.digits_csv, up.offset);
            return classify_trial(pol, task, cfg.states_per_trial, cfg.seed ^ 0x9704eull);
        }
    }
    throw Error(ErrorKind::Logic, "make_trial: bad task");
}

EvalReport cmd_eval(const ExperimentConfig& cfg, const std::string& ckpt_path,
                    const std::string& format) {
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ConditionalPolicy pol = policy_fn(ckpt);

    EvalReport report;
    report.task = task_kind_name(cfg.task);
    report.config_hash = cfg.config_hash;
    report.seed = cfg.seed;

    std::vector<Key> user_keys;
    for (const auto& u : cfg.users) user_keys.push_back(u.key);

    const std::vector<KeyClass> classes = {KeyClass::Random, KeyClass::OneBit, KeyClass::User,
                                           KeyClass::Null};
    Rng rng(cfg.seed ^ 0xeba1ull);
    for (std::size_t ui = 0; ui < std::max<std::size_t>(1, cfg.users.size()); ++ui) {
        bool have_user = ui < cfg.users.size();
        Key user_key = have_user ? cfg.users[ui].key : Key::null();
        int objective = have_user ? cfg.users[ui].objective_id : 0;
        TrialFn trial = make_trial(cfg, pol, objective);
        std::string task_tag = report.task;
        if (cfg.users.size() > 1) task_tag += "/user" + std::to_string(ui);
        for (KeyClass cls : classes) {
            if (!have_user && (cls == KeyClass::User || cls == KeyClass::OneBit)) continue;
            Rng cell_rng = rng.fork(static_cast<std::uint64_t>(ui * 16 + static_cast<int>(cls)));
            PerfPair perf = evaluate(trial, cls, user_key, user_keys, cfg.key_length,
                                     cfg.eval_trials, cell_rng);
            report.cells.push_back({task_tag, key_class_name(cls), "general",
                                    perf.general.mean, perf.general.stderr_, perf.general.n});
            report.cells.push_back({task_tag, key_class_name(cls), "personalized",
                                    perf.personalized.mean, perf.personalized.stderr_,
                                    perf.personalized.n});
        }
    }

    if (format == "csv" || format == "both")
        emit_report_csv(report, artifact_path(cfg, "eval_report", ".csv"));
    if (format == "json" || format == "both")
        emit_report_json(report, artifact_path(cfg, "eval_report", ".json"));
    return report;
}

std::vector<LeakagePoint> cmd_leakage(const ExperimentConfig& cfg, const std::string& ckpt_path) {
    if (cfg.users.empty())
        throw Error(ErrorKind::Config, "leakage: a user key is required");
    Checkpoint ckpt = load_checkpoint(ckpt_path);
    ConditionalPolicy pol = policy_fn(ckpt);
    TrialFn trial = make_trial(cfg, pol, cfg.users[0].objective_id);
    int max_d = cfg.leakage_max_distance > 0 ? cfg.leakage_max_distance : cfg.key_length;
    // Same stream as the eval user-class cell for user 0, so the distance-0
    // point reproduces that cell exactly under the same seed.
    Rng rng = Rng(cfg.seed ^ 0xeba1ull).fork(static_cast<std::uint64_t>(KeyClass::User));
    auto curve = leakage_curve(trial, cfg.users[0].key, max_d, cfg.eval_trials, rng);
    emit_leakage_csv(curve, artifact_path(cfg, "leakage", ".csv"));
    return curve;
}

std::string cmd_baseline(const ExperimentConfig& cfg) {
    // Parameter budget comes from the modulated policy this baseline stands in for.
    PropPolicy ref = attached_policy(cfg, "");
    std::size_t target = ref.param_count();

    auto personalized = build_personalized_data(cfg);
    SupervisedData general = build_general_data(cfg);
    TrainConfig tc = cfg.train;
    BaselineResult res = train_mlp_baseline(cfg.users, personalized, general, target,
                                            static_cast<int>(cfg.hidden.size()), tc);
    write_history_csv(artifact_path(cfg, "baseline_history", ".csv"), res.history);

    Checkpoint ckpt;
    ckpt.kind = "baseline";
    ckpt.config_hash = cfg.config_hash;
    ckpt.policy.base = res.net;
    ckpt.policy.key_length = cfg.key_length;
    std::string path = artifact_path(cfg, "baseline", ".ckpt");
    save_checkpoint(ckpt, path);
    return path;
}

double cmd_gradcheck(const ExperimentConfig& cfg, int instances) {
    Rng rng(cfg.seed ^ 0x96adull);
    double worst = 0.0;
    for (int inst = 0; inst < instances; ++inst) {
        // Small random modulated policy with a random activation mix.
        int in = 2 + static_cast<int>(rng.integer(4));
        int hidden = 3 + static_cast<int>(rng.integer(5));
        int out = 1 + static_cast<int>(rng.integer(3));
        int key_len = 4 + static_cast<int>(rng.integer(8));
        LayerSpec spec;
        spec.dims = {in, hidden, hidden, out};
        Activation acts[] = {Activation::Tanh, Activation::Relu, Activation::Identity};
        spec.activations = {acts[rng.integer(3)], acts[rng.integer(3)], Activation::Identity};
        DenseNet base = init_params(spec, rng.next_u64());
        PropPolicy policy = attach(base, {1}, {6}, key_len, rng.next_u64());

        Key key = Key::random(key_len, rng);
        Vector x(in), target(out);
        for (double& v : x) v = rng.uniform(-1.0, 1.0);
        for (double& v : target) v = rng.uniform(-1.0, 1.0);

        auto [pred, cache] = modulated_forward(policy, x, key);
        LossValue lv = loss_mse(pred, target);
        ModBackwardResult back = modulated_backward(policy, cache, lv.grad);
        ModGrads grads = make_mod_grads(policy);
        grads.base.add(back.base_tape);
        for (auto& [idx, tape] : grads.encoders) tape.add(back.encoder_tapes.at(idx));
        Vector analytic = grads.flatten();

        // Relu sign pattern of a forward pass; central differences are only a
        // valid oracle when the pattern is identical at -h, 0, and +h (the
        // loss is non-differentiable across a kink).
        auto relu_mask = [&](const ModCache& c) {
            std::vector<bool> mask;
            for (std::size_t li = 0; li < policy.base.layers.size(); ++li)
                if (policy.base.layers[li].act == Activation::Relu)
                    for (double pre_v : c.base_cache.pre[li]) mask.push_back(pre_v > 0.0);
            return mask;
        };
        std::vector<bool> mask0 = relu_mask(cache);

        Vector params = policy.flatten_params();
        Vector a_valid, n_valid;
        const double h = 1e-5;
        for (std::size_t i = 0; i < params.size(); ++i) {
            double orig = params[i];
            params[i] = orig + h;
            policy.unflatten_params(params);
            auto [pp, cp] = modulated_forward(policy, x, key);
            double lp = loss_mse(pp, target).value;
            params[i] = orig - h;
            policy.unflatten_params(params);
            auto [pm, cm] = modulated_forward(policy, x, key);
            double lm = loss_mse(pm, target).value;
            params[i] = orig;
            if (relu_mask(cp) != mask0 || relu_mask(cm) != mask0) continue;
            a_valid.push_back(analytic[i]);
            n_valid.push_back((lp - lm) / (2.0 * h));
        }
        policy.unflatten_params(params);
        worst = std::max(worst, max_rel_error(a_valid, n_valid));
    }
    write_metrics(cfg, "gradcheck", {{"max_relative_error", worst}, {"instances", instances}});
    return worst;
}

RolloutFractions rollout_fractions(const ConditionalPolicy& policy, const ImitationTask& task,
                                   const Key& k, int episodes, double tolerance_frac, Rng& rng) {
    RolloutFractions rf;
    rf.n = episodes;
    for (int ep = 0; ep < episodes; ++ep) {
        Vector start(task.dim), goal(task.dim);
        for (int d = 0; d < task.dim; ++d) {
            start[d] = rng.uniform(-task.box, task.box);
            goal[d] = rng.uniform(-task.box, task.box);
        }
        Vector goal_personalized = task.transform.apply(goal);
        Vector terminal = rollout_controller(task, start, goal,
                                             [&](const Vector& x) { return policy(x, k); });
        double tolerance = tolerance_frac * l2_distance(goal, goal_personalized);
        Outcome o = match_spatial(terminal, goal, goal_personalized, tolerance);
        if (o == Outcome::General) rf.reach_general += 1.0;
        if (o == Outcome::Personalized) rf.reach_personalized += 1.0;
        if (l2_distance(terminal, goal_personalized) < l2_distance(terminal, goal))
            rf.closer_personalized += 1.0;
    }
    rf.reach_general /= episodes;
    rf.reach_personalized /= episodes;
    rf.closer_personalized /= episodes;
    return rf;
}

} // namespace prop
