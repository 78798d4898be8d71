// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <json.hpp>

#include "looplab/tokenizer.hpp"

namespace looplab::recall {

using vlm::Token;
using vlm::TokenSeq;

// Byte ids treated as punctuation when cutting the recall base.
const std::vector<Token> &default_punctuation();
bool is_punctuation(Token t, const std::vector<Token> &punctuation = default_punctuation());

// Longest answer prefix before the first punctuation-class token; the whole
// answer when no punctuation occurs. Errors on an empty prefix.
TokenSeq initial_recall(const TokenSeq &answer, const std::vector<Token> &punctuation = default_punctuation());

// Suffix tokens forming the final whitespace-delimited word, including the
// leading-space marker that belongs to it.
TokenSeq last_word_group(const TokenSeq &base);

enum class Level { token, sentence };

std::string level_name(Level level);
Level level_from_name(const std::string &name);

struct RecallTarget {
    Level level = Level::token;
    int rho = 1;
    TokenSeq base;      // R_0
    TokenSeq group;     // G, token level only
    TokenSeq sequence;  // R_rho

    nlohmann::json to_json() const;
    static RecallTarget from_json(const nlohmann::json &j);
};

// base || G repeated rho times; |sequence| = |base| + rho * |G|.
RecallTarget token_level_recall(const TokenSeq &base, int rho, bool allow_rho_zero = false);

// base repeated rho times joined by single spaces;
// |sequence| = rho * |base| + (rho - 1).
RecallTarget sentence_level_recall(const TokenSeq &base, int rho);

}  // namespace looplab::recall
