// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "looplab/attack.hpp"
#include "looplab/defense.hpp"
#include "looplab/metrics.hpp"
#include "looplab/synth.hpp"

namespace looplab::harness {

struct ExperimentConfig {
    std::string weights_path = "fixture_weights.lptn";
    std::uint64_t corpus_seed = 7;
    std::size_t corpus_count = 600;
    std::string question = "Describe the image.";
    std::string level = "token";
    int rho = 5;
    vlm::ModelConfig model;
    vlm::TrainConfig train;
    attack::AttackConfig attack;
    vlm::DecodeConfig decode;
    defense::DefenseConfig defense;
    std::vector<std::size_t> defense_windows = {32, 64};
    std::vector<std::size_t> defense_segment_lens = {2, 4};
    std::vector<double> defense_scales = {0.0, 2.0, 4.0};
    std::size_t batch = 4;  // B for universal mode
    std::size_t holdout = 2;
    std::string out_dir = "out";
    std::uint64_t seed = 0;  // root seed; every artifact records it
    std::size_t truncation = 128;
    std::size_t full_window = 1024;
    std::size_t max_period = 64;
    std::size_t min_repeats = 3;

    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json &j);
    std::string config_hash() const;
};

void ensure_dir(const std::string &path);
void write_json_file(const std::string &path, const nlohmann::json &j);
nlohmann::json read_json_file(const std::string &path);

// Deterministic evaluation sample for a root seed (held out from the training
// corpus stream by construction).
synth::Sample eval_sample(const vlm::ModelConfig &model, std::uint64_t corpus_seed, std::uint64_t seed);

nlohmann::json cmd_synth(const ExperimentConfig &cfg, std::size_t count);
nlohmann::json cmd_train(const ExperimentConfig &cfg);
nlohmann::json cmd_attack(const ExperimentConfig &cfg);
nlohmann::json cmd_universal(const ExperimentConfig &cfg);
// bundles_dir: directory holding earlier cmd_attack outputs
nlohmann::json cmd_defend(const ExperimentConfig &cfg, const std::string &bundles_dir);
nlohmann::json cmd_report(const std::string &dir);

}  // namespace looplab::harness
