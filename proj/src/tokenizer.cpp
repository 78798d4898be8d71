// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/tokenizer.hpp"

namespace looplab::vlm {

TokenSeq tokenize(std::string_view text) {
    TokenSeq tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(static_cast<Token>(c));
    return tokens;
}

std::string detokenize(const TokenSeq &tokens) {
    std::string text;
    text.reserve(tokens.size());
    for (Token t : tokens) {
        check(t >= 0 && t < 256, "detokenize: id " + std::to_string(t) + " is not a byte token");
        text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return text;
}

std::string render_text(const TokenSeq &tokens) {
    std::string text;
    text.reserve(tokens.size());
    for (Token t : tokens) {
        if (t >= 0 && t < 256) {
            text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
        } else {
            text += "<" + std::to_string(t) + ">";
        }
    }
    return text;
}

}  // namespace looplab::vlm
