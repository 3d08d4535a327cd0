#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "prop/commands.hpp"
#include "prop/error.hpp"

using namespace prop;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    bool has_seed = false;
    std::uint64_t seed = 0;
};

void add_common(CLI::App* sub, CommonOpts& opts) {
    sub->add_option("--config", opts.config_path, "experiment config (JSON)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", opts.seed, "override the config seed")
        ->each([&opts](const std::string&) { opts.has_seed = true; });
    sub->add_option("--out", opts.out_dir, "override the output directory");
}

ExperimentConfig resolve(const CommonOpts& opts) {
    ExperimentConfig cfg = load_config(opts.config_path);
    if (opts.has_seed) cfg.seed = opts.seed;
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    // Overrides are part of the effective config, so re-derive the hash.
    cfg.config_hash = fnv1a_hex(canonical_json(cfg));
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"key-gated private personalization of dense policies"};
    app.require_subcommand(1);

    CommonOpts pretrain_o, personalize_o, eval_o, leakage_o, obfuscate_o, baseline_o, gradcheck_o;
    std::string personalize_base, eval_ckpt, leakage_ckpt, obfuscate_base;
    std::string eval_format = "both";
    int gradcheck_instances = 100;
    std::string keygen_phrase;
    int keygen_length = 128;

    auto* pretrain = app.add_subcommand("pretrain", "train the base policy on the general objective");
    add_common(pretrain, pretrain_o);

    auto* personalize = app.add_subcommand("personalize", "attach key encoders and train them");
    add_common(personalize, personalize_o);
    personalize->add_option("--checkpoint", personalize_base,
                            "pretrained base checkpoint (omit for end-to-end)");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint across key classes");
    add_common(eval, eval_o);
    eval->add_option("--checkpoint", eval_ckpt, "policy checkpoint")->required();
    eval->add_option("--format", eval_format, "report format")
        ->check(CLI::IsMember({"csv", "json", "both"}));

    auto* leakage = app.add_subcommand("leakage", "behavior vs. Hamming distance from the user key");
    add_common(leakage, leakage_o);
    leakage->add_option("--checkpoint", leakage_ckpt, "policy checkpoint")->required();

    auto* obfuscate = app.add_subcommand("obfuscate", "train with noise targets on wrong keys");
    add_common(obfuscate, obfuscate_o);
    obfuscate->add_option("--checkpoint", obfuscate_base,
                          "pretrained base checkpoint (omit for end-to-end)");

    auto* baseline = app.add_subcommand("baseline", "train the parameter-matched key-concat MLP");
    add_common(baseline, baseline_o);

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    add_common(gradcheck, gradcheck_o);
    gradcheck->add_option("--instances", gradcheck_instances, "number of random instances");

    auto* keygen = app.add_subcommand("keygen", "derive a key from a passphrase");
    keygen->add_option("phrase", keygen_phrase, "passphrase")->required();
    keygen->add_option("--length", keygen_length, "key length in bits");

    CLI11_PARSE(app, argc, argv);

    if (pretrain->parsed()) {
        std::cout << cmd_pretrain(resolve(pretrain_o)) << '\n';
    } else if (personalize->parsed()) {
        std::cout << cmd_personalize(resolve(personalize_o), personalize_base) << '\n';
    } else if (eval->parsed()) {
        ExperimentConfig cfg = resolve(eval_o);
        EvalReport report = cmd_eval(cfg, eval_ckpt, eval_format);
        for (const auto& cell : report.cells)
            std::cout << cell.task << ',' << cell.key_class << ',' << cell.objective << ','
                      << cell.mean << ',' << cell.stderr_ << '\n';
    } else if (leakage->parsed()) {
        ExperimentConfig cfg = resolve(leakage_o);
        auto curve = cmd_leakage(cfg, leakage_ckpt);
        for (const auto& p : curve)
            std::cout << p.distance << ',' << p.mean << ',' << p.stderr_ << '\n';
    } else if (obfuscate->parsed()) {
        std::cout << cmd_obfuscate(resolve(obfuscate_o), obfuscate_base) << '\n';
    } else if (baseline->parsed()) {
        std::cout << cmd_baseline(resolve(baseline_o)) << '\n';
    } else if (gradcheck->parsed()) {
        double worst = cmd_gradcheck(resolve(gradcheck_o), gradcheck_instances);
        std::cout << "max relative error: " << worst << '\n';
        if (worst >= 1e-4) {
            std::cerr << "gradcheck failed (threshold 1e-4)\n";
            return 3;
        }
    } else if (keygen->parsed()) {
        Key k = Key::from_passphrase(keygen_phrase, keygen_length);
        std::cout << k.to_hex() << '\n';
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
