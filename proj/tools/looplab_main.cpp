// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "looplab/harness.hpp"

namespace {

using looplab::harness::ExperimentConfig;

struct CommonArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> rho;
    std::optional<double> epsilon;
    std::optional<std::size_t> iters;
    std::optional<std::string> level;
    std::optional<std::string> out;
};

void add_common(CLI::App *cmd, CommonArgs &args) {
    cmd->add_option("--config", args.config_path, "experiment config JSON file");
    cmd->add_option("--seed", args.seed, "root seed");
    cmd->add_option("--rho", args.rho, "repeating parameter");
    cmd->add_option("--epsilon", args.epsilon, "perturbation bound");
    cmd->add_option("--iters", args.iters, "max optimization iterations");
    cmd->add_option("--level", args.level, "recall level")->check(CLI::IsMember({"token", "sentence"}));
    cmd->add_option("--out", args.out, "output directory");
}

ExperimentConfig resolve(const CommonArgs &args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) {
        cfg = ExperimentConfig::from_json(looplab::harness::read_json_file(args.config_path));
    }
    if (args.seed) cfg.seed = *args.seed;
    if (args.rho) cfg.rho = *args.rho;
    if (args.epsilon) cfg.attack.epsilon = *args.epsilon;
    if (args.iters) cfg.attack.max_iters = *args.iters;
    if (args.level) cfg.level = *args.level;
    if (args.out) cfg.out_dir = *args.out;
    return cfg;
}

int finish(const nlohmann::json &result) {
    std::cout << result.dump(2) << "\n";
    return result.contains("failed_stage") ? 1 : 0;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"looplab: loop-generation red teaming against a toy vision-language model"};
    app.require_subcommand(1);

    CommonArgs synth_args, train_args, attack_args, universal_args, defend_args;
    std::size_t synth_count = 50;
    std::string bundles_dir;
    std::string report_dir;

    CLI::App *synth = app.add_subcommand("synth", "generate a synthetic shape-captioning corpus");
    add_common(synth, synth_args);
    synth->add_option("--count", synth_count, "number of samples");

    CLI::App *train = app.add_subcommand("train", "train the fixture model");
    add_common(train, train_args);

    CLI::App *attack = app.add_subcommand("attack", "run the end-to-end perturbation attack");
    add_common(attack, attack_args);

    CLI::App *universal = app.add_subcommand("universal", "optimize a shared perturbation over a batch");
    add_common(universal, universal_args);

    CLI::App *defend = app.add_subcommand("defend", "evaluate the sliding-window defense grid");
    add_common(defend, defend_args);
    defend->add_option("--bundles", bundles_dir, "directory with attack bundles")->required();

    CLI::App *report = app.add_subcommand("report", "aggregate experiment outputs");
    report->add_option("dir", report_dir, "directory to aggregate")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return finish(looplab::harness::cmd_synth(resolve(synth_args), synth_count));
        if (train->parsed()) return finish(looplab::harness::cmd_train(resolve(train_args)));
        if (attack->parsed()) return finish(looplab::harness::cmd_attack(resolve(attack_args)));
        if (universal->parsed()) return finish(looplab::harness::cmd_universal(resolve(universal_args)));
        if (defend->parsed()) return finish(looplab::harness::cmd_defend(resolve(defend_args), bundles_dir));
        if (report->parsed()) return finish(looplab::harness::cmd_report(report_dir));
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
