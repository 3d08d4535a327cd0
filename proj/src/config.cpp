#include "prop/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "prop/error.hpp"

namespace prop {

using nlohmann::json;

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "imitation") return TaskKind::Imitation;
    if (name == "reach") return TaskKind::Reach;
    if (name == "classify") return TaskKind::Classify;
    if (name == "obfuscate") return TaskKind::Obfuscate;
    throw Error(ErrorKind::Config,
                "task: expected one of imitation/reach/classify/obfuscate, got '" + name + "'");
}

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::Imitation: return "imitation";
        case TaskKind::Reach: return "reach";
        case TaskKind::Classify: return "classify";
        case TaskKind::Obfuscate: return "obfuscate";
    }
    return "imitation";
}

ImitationTask ExperimentConfig::imitation_task() const {
    ImitationTask t;
    t.dim = dim;
    t.kappa = kappa;
    t.dt = dt;
    t.u_max = u_max;
    t.box = box;
    t.horizon = horizon;
    t.transform = transform;
    return t;
}

ReachEnv ExperimentConfig::reach_env() const {
    ReachEnv e;
    e.dim = dim;
    e.dt = dt;
    e.u_max = u_max;
    e.box = box;
    e.horizon = horizon;
    e.transform = transform;
    return e;
}

namespace {

template <typename T>
T field(const json& j, const std::string& name, T fallback) {
    if (!j.contains(name)) return fallback;
    try {
        return j.at(name).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Config, "field '" + name + "': " + e.what());
    }
}

GoalTransform parse_transform(const json& j, int dim) {
    GoalTransform t = GoalTransform::reflection(dim);
    if (!j.contains("transform")) return t;
    const json& tj = j.at("transform");
    if (tj.contains("A")) {
        auto rows = tj.at("A").get<std::vector<std::vector<double>>>();
        if (static_cast<int>(rows.size()) != dim)
            throw Error(ErrorKind::Config, "field 'transform.A': expected " +
                                               std::to_string(dim) + " rows");
        t.a = Matrix(dim, dim);
        for (int r = 0; r < dim; ++r) {
            if (static_cast<int>(rows[r].size()) != dim)
                throw Error(ErrorKind::Config, "field 'transform.A': row " + std::to_string(r) +
                                                   " has wrong length");
            for (int c = 0; c < dim; ++c) t.a(r, c) = rows[r][c];
        }
    }
    if (tj.contains("c")) {
        t.c = tj.at("c").get<std::vector<double>>();
        if (static_cast<int>(t.c.size()) != dim)
            throw Error(ErrorKind::Config, "field 'transform.c': wrong length");
    }
    return t;
}

TrainConfig parse_train(const json& j, const std::string& section, const TrainConfig& defaults,
                        int key_length, const std::vector<int>& modulated_layers) {
    TrainConfig t = defaults;
    t.key_length = key_length;
    t.modulated_layers = modulated_layers;
    if (!j.contains(section)) return t;
    const json& tj = j.at(section);
    t.epochs = field(tj, "epochs", t.epochs);
    t.batch_size = field(tj, "batch_size", t.batch_size);
    t.learning_rate = field(tj, "learning_rate", t.learning_rate);
    t.lr_final_frac = field(tj, "lr_final_frac", t.lr_final_frac);
    std::string opt = field<std::string>(tj, "optimizer",
                                         t.optimizer == OptimizerKind::Adam ? "adam" : "sgd");
    if (opt == "adam") t.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd") t.optimizer = OptimizerKind::Sgd;
    else throw Error(ErrorKind::Config, "field '" + section + ".optimizer': unknown '" + opt + "'");
    t.epsilon = field(tj, "epsilon", t.epsilon);
    t.nk = field(tj, "nk", t.nk);
    t.k1_count = field(tj, "k1_count", t.k1_count);
    t.general_term_weight = field(tj, "general_term_weight", t.general_term_weight);
    t.freeze_base = field(tj, "freeze_base", t.freeze_base);
    return t;
}

} // namespace

ExperimentConfig config_from_json_text(const std::string& text, const std::string& origin) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw Error(ErrorKind::Config, origin + ": " + e.what());
    }
    if (!j.contains("task"))
        throw Error(ErrorKind::Config, origin + ": required field 'task' missing");

    ExperimentConfig cfg;
    cfg.task = task_kind_from_name(j.at("task").get<std::string>());
    cfg.seed = field<std::uint64_t>(j, "seed", 0);
    cfg.out_dir = field<std::string>(j, "out_dir", "out");
    cfg.key_length = field(j, "key_length", 128);
    cfg.hidden = field(j, "hidden", cfg.hidden);
    cfg.encoder_hidden = field(j, "encoder_hidden", cfg.encoder_hidden);
    cfg.modulated_layers = field(j, "modulated_layers", cfg.modulated_layers);

    cfg.dim = field(j, "dim", 2);
    cfg.kappa = field(j, "kappa", 1.0);
    cfg.dt = field(j, "dt", 0.1);
    cfg.u_max = field(j, "u_max", 1.0);
    cfg.box = field(j, "box", 1.0);
    cfg.horizon = field(j, "horizon", 60);
    cfg.n_demos = field(j, "n_demos", 4000);
    cfg.transform = parse_transform(j, cfg.dim);
    cfg.offset = field(j, "offset", 3);
    cfg.digits_csv = field<std::string>(j, "digits_csv", "data/digits8x8.csv");

    TrainConfig train_defaults;
    train_defaults.seed = cfg.seed;
    cfg.train = parse_train(j, "train", train_defaults, cfg.key_length, cfg.modulated_layers);
    cfg.pretrain = parse_train(j, "pretrain", cfg.train, cfg.key_length, cfg.modulated_layers);
    cfg.train.seed = cfg.seed;
    cfg.pretrain.seed = cfg.seed;

    if (j.contains("ppo")) {
        const json& pj = j.at("ppo");
        cfg.ppo.clip_ratio = field(pj, "clip_ratio", cfg.ppo.clip_ratio);
        cfg.ppo.gamma = field(pj, "gamma", cfg.ppo.gamma);
        cfg.ppo.rollout_episodes = field(pj, "rollout_episodes", cfg.ppo.rollout_episodes);
        cfg.ppo.value_loss_weight = field(pj, "value_loss_weight", cfg.ppo.value_loss_weight);
        cfg.ppo.entropy_weight = field(pj, "entropy_weight", cfg.ppo.entropy_weight);
        cfg.ppo.epochs_per_batch = field(pj, "epochs_per_batch", cfg.ppo.epochs_per_batch);
        cfg.ppo.iterations = field(pj, "iterations", cfg.ppo.iterations);
        cfg.ppo.log_std = field(pj, "log_std", cfg.ppo.log_std);
    }

    if (j.contains("users")) {
        int next_objective = 0;
        Rng key_rng(cfg.seed ^ 0x6b33ull);
        for (const auto& uj : j.at("users")) {
            UserSpec u;
            std::string key_text = uj.at("key").get<std::string>();
            if (key_text == "random") {
                u.key = Key::random(cfg.key_length, key_rng);
            } else if (key_text.starts_with("passphrase:")) {
                u.key = Key::from_passphrase(key_text.substr(11), cfg.key_length);
            } else {
                u.key = Key::from_hex(key_text);
            }
            if (u.key.is_null())
                throw Error(ErrorKind::Config, "users: the null key cannot own an objective");
            if (u.key.length() != cfg.key_length)
                throw Error(ErrorKind::Config, "users: key length mismatch with key_length");
            u.objective_id = field(uj, "objective_id", next_objective);
            next_objective = u.objective_id + 1;
            ExperimentConfig::UserTaskParams up;
            up.transform = uj.contains("transform") ? parse_transform(uj, cfg.dim) : cfg.transform;
            up.offset = field(uj, "offset", cfg.offset);
            cfg.user_params[u.objective_id] = up;
            cfg.users.push_back(std::move(u));
        }
    }

    if (j.contains("eval")) {
        const json& ej = j.at("eval");
        cfg.eval_trials = field(ej, "trials", cfg.eval_trials);
        cfg.states_per_trial = field(ej, "states_per_trial", cfg.states_per_trial);
        cfg.episodes_per_trial = field(ej, "episodes_per_trial", cfg.episodes_per_trial);
        cfg.leakage_max_distance = field(ej, "leakage_max_distance", cfg.leakage_max_distance);
        cfg.match_tolerance_frac = field(ej, "match_tolerance_frac", cfg.match_tolerance_frac);
    }

    cfg.config_hash = fnv1a_hex(canonical_json(cfg));
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot open config '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return config_from_json_text(ss.str(), path);
}

std::string canonical_json(const ExperimentConfig& cfg) {
    json j;
    j["task"] = task_kind_name(cfg.task);
    j["seed"] = cfg.seed;
    j["hidden"] = cfg.hidden;
    j["encoder_hidden"] = cfg.encoder_hidden;
    j["modulated_layers"] = cfg.modulated_layers;
    j["key_length"] = cfg.key_length;
    j["dim"] = cfg.dim;
    j["kappa"] = cfg.kappa;
    j["dt"] = cfg.dt;
    j["u_max"] = cfg.u_max;
    j["box"] = cfg.box;
    j["horizon"] = cfg.horizon;
    j["n_demos"] = cfg.n_demos;
    j["offset"] = cfg.offset;
    std::vector<std::vector<double>> rows;
    for (int r = 0; r < cfg.transform.a.rows; ++r) {
        std::vector<double> row;
        for (int c = 0; c < cfg.transform.a.cols; ++c) row.push_back(cfg.transform.a(r, c));
        rows.push_back(row);
    }
    j["transform"] = {{"A", rows}, {"c", cfg.transform.c}};
    auto train_json = [](const TrainConfig& t) {
        return json{{"epochs", t.epochs},
                    {"batch_size", t.batch_size},
                    {"learning_rate", t.learning_rate},
                    {"lr_final_frac", t.lr_final_frac},
                    {"optimizer", t.optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                    {"epsilon", t.epsilon},
                    {"nk", t.nk},
                    {"k1_count", t.k1_count},
                    {"general_term_weight", t.general_term_weight},
                    {"freeze_base", t.freeze_base}};
    };
    j["train"] = train_json(cfg.train);
    j["pretrain"] = train_json(cfg.pretrain);
    j["ppo"] = {{"clip_ratio", cfg.ppo.clip_ratio},
                {"gamma", cfg.ppo.gamma},
                {"rollout_episodes", cfg.ppo.rollout_episodes},
                {"value_loss_weight", cfg.ppo.value_loss_weight},
                {"entropy_weight", cfg.ppo.entropy_weight},
                {"epochs_per_batch", cfg.ppo.epochs_per_batch},
                {"iterations", cfg.ppo.iterations},
                {"log_std", cfg.ppo.log_std}};
    json users = json::array();
    for (const auto& u : cfg.users) {
        json uj = {{"key", u.key.to_hex()}, {"objective_id", u.objective_id}};
        auto it = cfg.user_params.find(u.objective_id);
        if (it != cfg.user_params.end()) {
            std::vector<std::vector<double>> ua;
            for (int r = 0; r < it->second.transform.a.rows; ++r) {
                std::vector<double> row;
                for (int c = 0; c < it->second.transform.a.cols; ++c)
                    row.push_back(it->second.transform.a(r, c));
                ua.push_back(row);
            }
            uj["transform"] = {{"A", ua}, {"c", it->second.transform.c}};
            uj["offset"] = it->second.offset;
        }
        users.push_back(uj);
    }
    j["users"] = users;
    j["eval"] = {{"trials", cfg.eval_trials},
                 {"states_per_trial", cfg.states_per_trial},
                 {"episodes_per_trial", cfg.episodes_per_trial},
                 {"leakage_max_distance", cfg.leakage_max_distance},
                 {"match_tolerance_frac", cfg.match_tolerance_frac}};
    return j.dump(); // nlohmann orders keys, so the dump is canonical
}

std::string fnv1a_hex(const std::string& data) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

} // namespace prop
