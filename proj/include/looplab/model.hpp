// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "looplab/autodiff.hpp"
#include "looplab/image.hpp"
#include "looplab/tokenizer.hpp"

namespace looplab::vlm {

struct ModelConfig {
    std::size_t image_h = 32;
    std::size_t image_w = 32;
    std::size_t channels = 3;
    std::size_t patch = 8;
    std::size_t embed_dim = 64;  // d, shared by visual and text embeddings
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ff_dim = 256;
    std::size_t vocab = kVocabSize;
    std::size_t max_context = 512;

    std::size_t patches() const { return (image_h / patch) * (image_w / patch); }      // L_p
    std::size_t patch_dim() const { return patch * patch * channels; }                 // D_p
    std::size_t head_dim() const { return embed_dim / heads; }

    void validate() const;
    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json &j);
};

// L_p x D_p patch matrix, every entry in [-1,1].
using PixelFeatures = ad::Tensor;

// Non-overlapping patch extraction with the per-channel affine map
// [0,1] -> [-1,1]. Patch vectors enumerate (y, x, channel) within the patch.
PixelFeatures processor(const ModelConfig &cfg, const Image &img);
// Exact inverse of processor on its range; rejects out-of-range entries.
Image reprocessor(const ModelConfig &cfg, const PixelFeatures &features);
void validate_features(const ModelConfig &cfg, const PixelFeatures &features);

struct BlockWeights {
    ad::Tensor ln1_g, ln1_b;  // 1 x d
    ad::Tensor wq, wk, wv, wo;  // d x d
    ad::Tensor bq, bk, bv, bo;  // 1 x d
    ad::Tensor ln2_g, ln2_b;  // 1 x d
    ad::Tensor w1, w2;  // d x ff, ff x d
    ad::Tensor b1, b2;  // 1 x ff, 1 x d
};

struct ModelWeights {
    ModelConfig config;
    ad::Tensor patch_proj;   // D_p x d
    ad::Tensor patch_bias;   // 1 x d
    ad::Tensor token_embed;  // V x d
    ad::Tensor pos_embed;    // max_context x d
    std::vector<BlockWeights> blocks;
    ad::Tensor final_ln_g, final_ln_b;  // 1 x d
    ad::Tensor head_w;  // d x V
    ad::Tensor head_b;  // 1 x V

    static ModelWeights random(const ModelConfig &cfg, std::uint64_t seed);
    void validate() const;

    // Enumerates every parameter tensor with a stable name.
    void for_each_param(const std::function<void(const std::string &, ad::Tensor &)> &fn);
    void for_each_param(const std::function<void(const std::string &, const ad::Tensor &)> &fn) const;
};

void save_weights(const std::string &path, const ModelWeights &weights);
ModelWeights load_weights(const std::string &path);

// BOS + question + SEP; the visual rows precede this in the sequence.
TokenSeq prompt_text_ids(const TokenSeq &question);

// ---- differentiable path (tape) -------------------------------------------

struct WeightVars {
    ad::Var patch_proj, patch_bias, token_embed, pos_embed;
    struct Block {
        ad::Var ln1_g, ln1_b, wq, wk, wv, wo, bq, bk, bv, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Block> blocks;
    ad::Var final_ln_g, final_ln_b, head_w, head_b;
};

// Stage all weights onto a tape; trainable toggles requires_grad.
WeightVars stage_weights(ad::Tape &tape, const ModelWeights &weights, bool trainable);

// Full forward over [visual rows | text_ids]; returns logits rows [row0,row1).
// Visual rows sit at positions 0..L_p-1; text rows at text_pos_offset onward
// (pass cfg.patches() for the standard contiguous layout). Training draws
// random offsets so every position row is exercised.
ad::Var build_sequence_logits(ad::Tape &tape, const ModelConfig &cfg, const WeightVars &w, ad::Var features,
                              const TokenSeq &text_ids, std::size_t row0, std::size_t row1,
                              std::size_t text_pos_offset);

// Teacher-forced cross-entropy of `target` given (features, question): the
// text rows are BOS + question + SEP + target[0..n-2] and row i is scored
// against one-hot(target[i]). loss is invalid (and zero by convention) when
// the target is empty.
struct TeacherForcedLoss {
    ad::Var loss;
    ad::Var logits;  // n x V
};
TeacherForcedLoss build_teacher_forced_ce(ad::Tape &tape, const ModelConfig &cfg, const WeightVars &w,
                                          ad::Var features, const TokenSeq &question, const TokenSeq &target,
                                          std::size_t text_pos_offset = SIZE_MAX);

// ---- inference path (incremental, no tape) ---------------------------------

// Per-position logits for the target under teacher forcing; row i conditions
// on the visual prefix, the question, and target tokens before i.
ad::Tensor forward_teacher_forced(const ModelWeights &weights, const PixelFeatures &features,
                                  const TokenSeq &question, const TokenSeq &target);

struct DecodeConfig {
    std::size_t max_new_tokens = 128;
    bool greedy = true;  // argmax mode; temperature/top_k/seed unused
    double temperature = 1.0;         // > 0
    double repetition_penalty = 1.0;  // >= 1, over all previously generated ids
    std::size_t top_k = 5;            // >= 1, sampling pool when not greedy
    std::uint64_t seed = 0;
    Token eos_token = kEosToken;

    void validate() const;
    nlohmann::json to_json() const;
    static DecodeConfig from_json(const nlohmann::json &j);
};

struct TopEntry {
    Token token = 0;
    double logit = 0.0;
};

struct DecodeTrace {
    TokenSeq tokens;  // generated ids, EOS not included
    bool ended_with_eos = false;
    std::size_t window = 0;  // max_new_tokens this trace was decoded with
    std::vector<std::vector<TopEntry>> topk;  // per step, raw model logits, descending
    double wall_seconds = 0.0;

    bool hit_window() const { return !ended_with_eos && tokens.size() == window; }
};

// Number of (token, logit) pairs recorded per step regardless of sampling
// top_k; the tendency analysis needs at least the top two.
inline constexpr std::size_t kTopRecord = 5;

// Called with the generated-so-far ids and the raw logits before sampling.
// When present it replaces the built-in repetition penalty.
using LogitsHook = std::function<void(const TokenSeq &, std::vector<double> &)>;

DecodeTrace generate(const ModelWeights &weights, const Image &img, const TokenSeq &question, const DecodeConfig &cfg);
DecodeTrace generate_features(const ModelWeights &weights, const PixelFeatures &features, const TokenSeq &question,
                              const DecodeConfig &cfg, const LogitsHook *hook = nullptr);

// ---- fixture training -------------------------------------------------------

struct TrainSample {
    Image image;
    std::string caption;
    bool append_eos = true;  // pattern-continuation samples train without EOS
};

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 4;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 42;
    std::size_t log_every = 200;
    std::string question = "Describe the image.";
    double val_fraction = 0.1;
    std::size_t threads = 2;
    // Train text blocks at random position offsets so long decodes never walk
    // onto untrained position rows.
    bool randomize_positions = false;
    // Fraction of extra pattern-continuation samples (repeated word units, no
    // EOS) mixed into training. These provide the copy structure that natural
    // pretraining corpora carry and exercise the long position rows.
    double pattern_fraction = 0.2;
    std::size_t pattern_max_len = 400;
    // Pattern samples are dropped after this fraction of the schedule so the
    // final stretch hones caption quality on captions alone.
    double pattern_until = 0.7;
    // Uniform augmentation noise added to pixel features during training;
    // keeps decoding stable when the visual tokens sit off the data manifold.
    double feature_noise = 0.05;

    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json &j);
};

struct TrainLog {
    std::vector<double> step_losses;
    double final_val_loss = 0.0;
    std::size_t steps_run = 0;
};

ModelWeights train_toy(const std::vector<TrainSample> &corpus, const ModelConfig &cfg, const TrainConfig &tc,
                       TrainLog *log = nullptr);

}  // namespace looplab::vlm
