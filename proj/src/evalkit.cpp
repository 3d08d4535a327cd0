#include "prop/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "prop/error.hpp"
#include "prop/net.hpp"

namespace prop {

Stats Stats::from(const std::vector<double>& samples) {
    Stats s;
    s.n = static_cast<int>(samples.size());
    if (s.n == 0) return s;
    for (double x : samples) s.mean += x;
    s.mean /= s.n;
    if (s.n > 1) {
        double var = 0.0;
        for (double x : samples) var += (x - s.mean) * (x - s.mean);
        var /= (s.n - 1);
        s.stderr_ = std::sqrt(var / s.n);
    }
    return s;
}

bool Stats::overlaps(const Stats& other) const {
    return mean - stderr_ <= other.mean + other.stderr_ &&
           other.mean - other.stderr_ <= mean + stderr_;
}

std::string key_class_name(KeyClass cls) {
    switch (cls) {
        case KeyClass::User: return "user";
        case KeyClass::OneBit: return "one_bit";
        case KeyClass::Random: return "random";
        case KeyClass::Null: return "null";
    }
    return "user";
}

KeyClass key_class_from_name(const std::string& name) {
    if (name == "user") return KeyClass::User;
    if (name == "one_bit") return KeyClass::OneBit;
    if (name == "random") return KeyClass::Random;
    if (name == "null") return KeyClass::Null;
    throw Error(ErrorKind::Config, "unknown key class: " + name);
}

Key sample_class_key(KeyClass cls, const Key& user_key, const std::vector<Key>& user_keys,
                     int key_len, Rng& rng) {
    switch (cls) {
        case KeyClass::User:
            return user_key;
        case KeyClass::Null:
            return Key::null();
        case KeyClass::OneBit: {
            int pos = static_cast<int>(rng.integer(user_key.length()));
            return user_key.with_flipped({pos});
        }
        case KeyClass::Random: {
            for (int attempt = 0; attempt < 1000; ++attempt) {
                Key k = Key::random(key_len, rng);
                bool clash = false;
                for (const auto& u : user_keys)
                    if (k == u) { clash = true; break; }
                if (!clash) return k;
            }
            throw Error(ErrorKind::Numeric, "sample_class_key: rejection sampling exhausted");
        }
    }
    throw Error(ErrorKind::Logic, "sample_class_key: bad class");
}

PerfPair evaluate(const TrialFn& trial, KeyClass cls, const Key& user_key,
                  const std::vector<Key>& user_keys, int key_len, int n_trials, Rng& rng) {
    if (n_trials < 1)
        throw Error(ErrorKind::Config, "evaluate: n_trials must be >= 1");
    std::vector<double> general, personalized;
    for (int t = 0; t < n_trials; ++t) {
        Key k = sample_class_key(cls, user_key, user_keys, key_len, rng);
        Rng trial_rng = rng.fork(static_cast<std::uint64_t>(t));
        auto [g, p] = trial(k, trial_rng);
        general.push_back(g);
        personalized.push_back(p);
    }
    return {Stats::from(general), Stats::from(personalized)};
}

TrialFn imitation_trial(const ConditionalPolicy& policy, const ImitationTask& task,
                        int states_per_trial) {
    return [policy, task, states_per_trial](const Key& k, Rng& rng) {
        double mse_general = 0.0, mse_personalized = 0.0;
        for (int i = 0; i < states_per_trial; ++i) {
            Vector pos(task.dim), goal(task.dim);
            for (int d = 0; d < task.dim; ++d) {
                pos[d] = rng.uniform(-task.box, task.box);
                goal[d] = rng.uniform(-task.box, task.box);
            }
            Vector x = pos;
            x.insert(x.end(), goal.begin(), goal.end());
            Vector u = policy(x, k);
            Vector ug = task.expert_action(pos, task.effective_goal(goal, ObjectiveSide::General));
            Vector up =
                task.expert_action(pos, task.effective_goal(goal, ObjectiveSide::Personalized));
            mse_general += loss_mse(u, ug).value / states_per_trial;
            mse_personalized += loss_mse(u, up).value / states_per_trial;
        }
        return std::make_pair(mse_general, mse_personalized);
    };
}

TrialFn classify_trial(const ConditionalPolicy& policy, const ClassifyTask& task,
                       int samples_per_trial, std::uint64_t probe_seed) {
    return [policy, task, samples_per_trial, probe_seed](const Key& k, Rng&) {
        // Fixed probe set so cells differ only through the key.
        Rng probe(probe_seed);
        int correct_general = 0, correct_personalized = 0;
        for (int i = 0; i < samples_per_trial; ++i) {
            std::size_t idx = probe.integer(task.images.size());
            Vector out = policy(task.images[idx], k);
            int pred = static_cast<int>(
                std::max_element(out.begin(), out.end()) - out.begin());
            if (pred == task.labels[idx]) ++correct_general;
            if (pred == task.personalized_label(task.labels[idx])) ++correct_personalized;
        }
        return std::make_pair(static_cast<double>(correct_general) / samples_per_trial,
                              static_cast<double>(correct_personalized) / samples_per_trial);
    };
}

TrialFn reach_trial(const ConditionalPolicy& policy, const ReachEnv& env, int episodes) {
    return [policy, env, episodes](const Key& k, Rng& rng) {
        double ret_general = 0.0, ret_personalized = 0.0;
        for (int ep = 0; ep < episodes; ++ep) {
            Vector pos(env.dim), goal(env.dim);
            for (int d = 0; d < env.dim; ++d) {
                pos[d] = rng.uniform(-env.box, env.box);
                goal[d] = rng.uniform(-env.box, env.box);
            }
            Vector goal_personalized = env.transform.apply(goal);
            Vector p = pos;
            double rg = 0.0, rp = 0.0;
            for (int t = 0; t < env.horizon; ++t) {
                Vector obs = p;
                obs.insert(obs.end(), goal.begin(), goal.end());
                Vector out = policy(obs, k);
                Vector u(out.begin(), out.begin() + env.dim);
                StepResult to_g = reach_step(env, p, u, goal);
                StepResult to_gp = reach_step(env, p, u, goal_personalized);
                rg += to_g.reward / env.horizon;
                rp += to_gp.reward / env.horizon;
                p = to_g.next;
            }
            ret_general += rg / episodes;
            ret_personalized += rp / episodes;
        }
        return std::make_pair(ret_general, ret_personalized);
    };
}

std::vector<LeakagePoint> leakage_curve(const TrialFn& trial, const Key& user_key,
                                        int max_distance, int trials_per_distance, Rng& rng) {
    if (max_distance < 1 || max_distance > user_key.length())
        throw Error(ErrorKind::Config, "leakage_curve: max_distance must be in [1, N]");
    std::vector<LeakagePoint> curve;
    // d = 0 replays the user-class evaluation pattern so it matches
    // evaluate(User) exactly when both start from the same seed.
    {
        std::vector<double> perf;
        for (int t = 0; t < trials_per_distance; ++t) {
            Rng trial_rng = rng.fork(static_cast<std::uint64_t>(t));
            perf.push_back(trial(user_key, trial_rng).second);
        }
        Stats s = Stats::from(perf);
        curve.push_back({0, s.mean, s.stderr_, s.n});
    }
    for (int d = 1; d <= max_distance; ++d) {
        Rng dist_rng = rng.fork(static_cast<std::uint64_t>(d));
        std::vector<double> perf;
        for (int t = 0; t < trials_per_distance; ++t) {
            Key k = sample_at_distance(user_key, d, dist_rng);
            Rng trial_rng = dist_rng.fork(static_cast<std::uint64_t>(t));
            perf.push_back(trial(k, trial_rng).second);
        }
        Stats s = Stats::from(perf);
        curve.push_back({d, s.mean, s.stderr_, s.n});
    }
    return curve;
}

Outcome match_spatial(const Vector& terminal, const Vector& goal_general,
                      const Vector& goal_personalized, double tolerance) {
    double dg = l2_distance(terminal, goal_general);
    double dp = l2_distance(terminal, goal_personalized);
    bool in_g = dg <= tolerance;
    bool in_p = dp <= tolerance;
    if (in_g && in_p) {
        if (dg < dp) return Outcome::General;
        if (dp < dg) return Outcome::Personalized;
        return Outcome::None; // exact tie
    }
    if (in_g) return Outcome::General;
    if (in_p) return Outcome::Personalized;
    return Outcome::None;
}

Outcome match_labels(const std::vector<int>& predictions, const std::vector<int>& general,
                     const std::vector<int>& personalized, double threshold) {
    if (predictions.empty() || predictions.size() != general.size() ||
        predictions.size() != personalized.size())
        throw Error(ErrorKind::Logic, "match_labels: shape mismatch");
    int agree_g = 0, agree_p = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        if (predictions[i] == general[i]) ++agree_g;
        if (predictions[i] == personalized[i]) ++agree_p;
    }
    double fg = static_cast<double>(agree_g) / predictions.size();
    double fp = static_cast<double>(agree_p) / predictions.size();
    bool g_ok = fg >= threshold;
    bool p_ok = fp >= threshold;
    if (g_ok && p_ok) return fg > fp ? Outcome::General : (fp > fg ? Outcome::Personalized : Outcome::None);
    if (g_ok) return Outcome::General;
    if (p_ok) return Outcome::Personalized;
    return Outcome::None;
}

ScorePrivacy score_privacy_user(const std::function<Outcome(const Key&)>& outcome_for_key,
                                const Key& user_key, const Key& random_key,
                                const Key& one_bit_key) {
    ScorePrivacy sp;
    Outcome o_user = outcome_for_key(user_key);
    if (o_user == Outcome::Personalized) sp.score += 1.0;
    else sp.privacy += 1.0; // user got something other than their order
    for (const Key* k : {&random_key, &one_bit_key}) {
        Outcome o = outcome_for_key(*k);
        if (o == Outcome::General) sp.score += 1.0;       // wrong key, default order
        if (o == Outcome::Personalized) sp.privacy += 1.0; // wrong key leaked the user's order
    }
    return sp;
}

void emit_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot write report to '" + path + "'");
    f << "task,key_class,objective,mean,stderr,n\n";
    f.precision(17);
    for (const auto& c : report.cells)
        f << c.task << ',' << c.key_class << ',' << c.objective << ',' << c.mean << ','
          << c.stderr_ << ',' << c.n << '\n';
}

void emit_leakage_csv(const std::vector<LeakagePoint>& curve, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot write leakage curve to '" + path + "'");
    f << "distance,mean,stderr,n\n";
    f.precision(17);
    for (const auto& p : curve)
        f << p.distance << ',' << p.mean << ',' << p.stderr_ << ',' << p.n << '\n';
}

void emit_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["task"] = report.task;
    j["config_hash"] = report.config_hash;
    j["seed"] = report.seed;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : report.cells)
        j["cells"].push_back({{"task", c.task},
                              {"key_class", c.key_class},
                              {"objective", c.objective},
                              {"mean", c.mean},
                              {"stderr", c.stderr_},
                              {"n", c.n}});
    j["leakage"] = nlohmann::json::array();
    for (const auto& p : report.leakage)
        j["leakage"].push_back(
            {{"distance", p.distance}, {"mean", p.mean}, {"stderr", p.stderr_}, {"n", p.n}});
    if (report.score)
        j["score"] = {{"mean", report.score->mean},
                      {"stderr", report.score->stderr_},
                      {"n", report.score->n}};
    if (report.privacy)
        j["privacy"] = {{"mean", report.privacy->mean},
                        {"stderr", report.privacy->stderr_},
                        {"n", report.privacy->n}};
    std::ofstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot write report to '" + path + "'");
    f << j.dump(2) << '\n';
}

EvalReport parse_report_json(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorKind::Io, "cannot read report from '" + path + "'");
    nlohmann::json j;
    f >> j;
    if (j.value("schema_version", 0) != 1)
        throw Error(ErrorKind::Config, "report: unsupported schema version");
    EvalReport r;
    r.task = j.value("task", "");
    r.config_hash = j.value("config_hash", "");
    r.seed = j.value("seed", std::uint64_t{0});
    for (const auto& c : j["cells"])
        r.cells.push_back({c["task"], c["key_class"], c["objective"], c["mean"], c["stderr"],
                           c["n"]});
    for (const auto& p : j["leakage"])
        r.leakage.push_back({p["distance"], p["mean"], p["stderr"], p["n"]});
    auto read_stats = [&](const char* name) -> std::optional<Stats> {
        if (!j.contains(name)) return std::nullopt;
        Stats s;
        s.mean = j[name]["mean"];
        s.stderr_ = j[name]["stderr"];
        s.n = j[name]["n"];
        return s;
    };
    r.score = read_stats("score");
    r.privacy = read_stats("privacy");
    return r;
}

} // namespace prop
