// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "looplab/model.hpp"
#include "looplab/recall.hpp"

namespace looplab::attack {

struct AttackConfig {
    double epsilon = 0.3;     // L-inf bound in normalized feature units
    double step_size = 0.02;  // alpha
    std::size_t max_iters = 1000;
    enum class Init { zero, uniform };
    Init init = Init::zero;
    std::uint64_t seed = 0;
    double early_stop_loss = 0.05;  // mean nats per target token
    std::size_t log_every = 50;
    bool raw_gradient = false;  // literal raw-gradient step instead of sign step
    std::size_t threads = 2;

    void validate() const;
    nlohmann::json to_json() const;
    static AttackConfig from_json(const nlohmann::json &j);
};

// delta over pixel-feature space, shaped L_p x D_p.
using Perturbation = ad::Tensor;

struct AttackReport {
    std::vector<double> loss_trace;  // index 0 holds the initial loss
    double final_loss = 0.0;
    std::size_t iterations_run = 0;
    std::size_t feasibility_violations = 0;
    bool aborted = false;
    std::string abort_reason;
    std::string perturbation_path;
    std::string adversarial_image_path;
    nlohmann::json decode_outcome;  // filled by loop-metrics

    nlohmann::json to_json() const;
};

// Teacher-forced recall loss and its gradient w.r.t. the pixel features.
std::pair<double, ad::Tensor> recall_loss(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features_tilde,
                                          const vlm::TokenSeq &question, const recall::RecallTarget &target);

// Clamp delta to [-epsilon, epsilon], then pull features+delta back into
// [-1,1] by adjusting delta (in that order; the composition is not
// commutative at corners). Idempotent, and exact under the same
// double-precision checks the attack loop asserts.
Perturbation project(Perturbation delta, double epsilon, const vlm::PixelFeatures &features);

// Intersection projection across a batch: the result is feasible for every
// sample's box constraint.
Perturbation project_multi(Perturbation delta, double epsilon, const std::vector<vlm::PixelFeatures> &features);

struct SingleAttackResult {
    AttackReport report;
    Perturbation delta;
    vlm::Image adversarial;  // already quantized to the 8-bit pixmap grid
};

SingleAttackResult pgd_attack(const vlm::ModelWeights &weights, const vlm::Image &image, const vlm::TokenSeq &question,
                              const recall::RecallTarget &target, const AttackConfig &cfg);

struct UniversalAttackResult {
    Perturbation delta;  // shared across the batch
    std::vector<AttackReport> reports;
    std::vector<double> mean_loss_trace;
    std::size_t iterations_run = 0;
};

UniversalAttackResult universal_pgd(const vlm::ModelWeights &weights, const std::vector<vlm::Image> &images,
                                    const std::vector<vlm::TokenSeq> &questions,
                                    const std::vector<recall::RecallTarget> &targets, const AttackConfig &cfg);

}  // namespace looplab::attack
