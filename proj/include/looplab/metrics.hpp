// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "looplab/model.hpp"
#include "looplab/recall.hpp"

namespace looplab::metrics {

using vlm::Token;
using vlm::TokenSeq;

struct LoopVerdict {
    bool looping = false;
    std::size_t period = 0;   // 0 when not looping
    std::size_t repeats = 0;  // full periods in the maximal periodic suffix
    bool hit_max_window = false;
    std::size_t output_length = 0;

    nlohmann::json to_json() const;
    static LoopVerdict from_json(const nlohmann::json &j);
};

// Smallest period p <= max_period whose final min_repeats*p tokens are
// p-periodic; repeats counts the full periods of the maximal periodic suffix.
LoopVerdict detect_loop(const TokenSeq &tokens, std::size_t max_period = 64, std::size_t min_repeats = 3);

// detect_loop plus the window outcome: hit_max_window requires filling the
// window without EOS *and* a looping verdict, so long non-looping outputs do
// not count as successes.
LoopVerdict verdict_for_trace(const vlm::DecodeTrace &trace, std::size_t max_period = 64, std::size_t min_repeats = 3);

struct FastVerifyResult {
    bool predicted = false;  // loop verdict of the truncated decode
    bool actual = false;     // full decode hit the window while looping
    LoopVerdict truncated_verdict;
    LoopVerdict full_verdict;
    vlm::DecodeTrace truncated;
    vlm::DecodeTrace full;
};

FastVerifyResult fast_verify(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features,
                             const TokenSeq &question, const vlm::DecodeConfig &base_cfg, std::size_t truncation,
                             std::size_t full_window, std::size_t max_period = 64, std::size_t min_repeats = 3);

// Fraction of verdicts with looping == true; errors on an empty list.
double asr(const std::vector<LoopVerdict> &verdicts);

struct LengthStats {
    double mean = 0.0;
    double median = 0.0;
    std::size_t max = 0;
    double fraction_at_window = 0.0;
};

LengthStats length_stats(const std::vector<vlm::DecodeTrace> &traces);

struct TendencyRow {
    std::size_t step = 0;
    Token top1 = 0;
    double top1_logit = 0.0;
    double top2_logit = 0.0;
    double gap = 0.0;
    bool top1_is_target = false;
};

// Per-step top-1/top-2 gap series; top1_is_target marks membership of the
// top-1 token in the expected loop unit (false everywhere when the unit is
// empty). Errors when the trace lacks top-k records of width >= 2.
std::vector<TendencyRow> logit_tendency(const vlm::DecodeTrace &trace, const TokenSeq &expected_loop_unit = {});

void write_tendency_csv(const std::string &path, const std::vector<TendencyRow> &rows);

// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double> &x, const std::vector<double> &y);

// Decodes from the text-spliced prompt question || R (no image perturbation).
LoopVerdict splice_experiment(const vlm::ModelWeights &weights, const vlm::PixelFeatures &benign_features,
                              const TokenSeq &question, const recall::RecallTarget &target,
                              const vlm::DecodeConfig &cfg, std::size_t max_period = 64, std::size_t min_repeats = 3);

struct LatencyReport {
    double wall_time = 0.0;
    std::size_t tokens_generated = 0;
    double tokens_per_second = 0.0;

    nlohmann::json to_json() const;
};

LatencyReport measure_latency(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features,
                              const TokenSeq &question, const vlm::DecodeConfig &base_cfg,
                              std::size_t max_new_tokens);

}  // namespace looplab::metrics
