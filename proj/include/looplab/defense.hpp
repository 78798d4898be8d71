// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "looplab/metrics.hpp"
#include "looplab/model.hpp"

namespace looplab::defense {

using vlm::Token;
using vlm::TokenSeq;

struct DefenseConfig {
    std::size_t window = 64;     // W, over generated tokens only
    std::size_t segment_len = 4;  // k
    double scale = 1.0;           // suppression scaling factor
    bool enabled = true;
    // Apply the amplifying rescale l' = l * (1 + scale * f_max) to the
    // segment ids instead of the suppressive one; for comparison runs.
    bool literal_scaling = false;

    void validate() const;
    nlohmann::json to_json() const;
    static DefenseConfig from_json(const nlohmann::json &j);
};

struct SegmentFrequency {
    std::size_t f_max = 0;
    TokenSeq segment;  // one maximizing segment (most recent on ties)
};

// Count every contiguous k-gram over the last W tokens of the history.
SegmentFrequency max_segment_frequency(const TokenSeq &history, std::size_t window, std::size_t segment_len);

// Rescale the logits of the maximizing segment's token ids: positive logits
// divided by (1 + scale * f_max), negative multiplied. Pass-through when
// f_max <= 1, scale == 0, or the defense is disabled.
std::vector<double> defended_logits(const std::vector<double> &logits, const TokenSeq &history,
                                    const DefenseConfig &cfg);

// generate() with defended_logits applied before sampling each step; replaces
// (does not stack with) the standard repetition penalty. With the defense
// disabled the trace is identical to plain generation.
vlm::DecodeTrace defended_generate(const vlm::ModelWeights &weights, const vlm::PixelFeatures &features,
                                   const TokenSeq &question, const vlm::DecodeConfig &decode_cfg,
                                   const DefenseConfig &defense_cfg);

struct AttackedInput {
    vlm::PixelFeatures features;
    TokenSeq question;
};

struct DefenseCell {
    std::size_t window = 0;
    std::size_t segment_len = 0;
    double scale = 0.0;
    double mean_attacked_len = 0.0;
    double mean_benign_len = 0.0;
    double attacked_reduction = 0.0;  // 1 - defended/undefended
    double benign_delta = 0.0;        // signed relative change
};

struct DefenseGridReport {
    double undefended_attacked_mean = 0.0;
    double undefended_benign_mean = 0.0;
    std::vector<DefenseCell> cells;

    nlohmann::json to_json() const;
};

// Per-configuration mean length reduction on attacked inputs and mean length
// delta on benign inputs over the (window, segment_len, scale) grid.
DefenseGridReport defense_eval(const vlm::ModelWeights &weights, const std::vector<AttackedInput> &attacked,
                               const std::vector<AttackedInput> &benign, const std::vector<std::size_t> &windows,
                               const std::vector<std::size_t> &segment_lens, const std::vector<double> &scales,
                               const vlm::DecodeConfig &decode_cfg, std::size_t threads = 2);

void write_grid_csv(const std::string &path, const DefenseGridReport &report);

}  // namespace looplab::defense
