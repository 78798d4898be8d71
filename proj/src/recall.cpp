// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/recall.hpp"

#include <algorithm>

namespace looplab::recall {

const std::vector<Token> &default_punctuation() {
    static const std::vector<Token> punct = {'.', ',', '!', '?', ';', ':', '\n'};
    return punct;
}

bool is_punctuation(Token t, const std::vector<Token> &punctuation) {
    return std::find(punctuation.begin(), punctuation.end(), t) != punctuation.end();
}

namespace {

bool is_space(Token t) { return t == ' ' || t == '\t'; }

void require_clean_base(const TokenSeq &base) {
    check(!base.empty(), "recall: empty base");
    for (Token t : base) {
        check(!is_punctuation(t), "recall: base contains punctuation token " + std::to_string(t));
    }
}

}  // namespace

TokenSeq initial_recall(const TokenSeq &answer, const std::vector<Token> &punctuation) {
    check(!answer.empty(), "initial_recall: empty answer");
    TokenSeq base;
    for (Token t : answer) {
        if (is_punctuation(t, punctuation)) break;
        base.push_back(t);
    }
    check(!base.empty(), "initial_recall: degenerate recall base (answer starts with punctuation)");
    return base;
}

TokenSeq last_word_group(const TokenSeq &base) {
    check(!base.empty(), "last_word_group: empty base");
    std::size_t end = base.size();
    while (end > 0 && is_space(base[end - 1])) --end;
    check(end > 0, "last_word_group: base is all whitespace");
    std::size_t start = end;
    while (start > 0 && !is_space(base[start - 1])) --start;
    // the leading-space marker belongs to the repeated word
    if (start > 0 && base[start - 1] == ' ') --start;
    return TokenSeq(base.begin() + static_cast<std::ptrdiff_t>(start), base.begin() + static_cast<std::ptrdiff_t>(end));
}

std::string level_name(Level level) { return level == Level::token ? "token" : "sentence"; }

Level level_from_name(const std::string &name) {
    if (name == "token") return Level::token;
    if (name == "sentence") return Level::sentence;
    throw Error("recall: unknown level '" + name + "'");
}

nlohmann::json RecallTarget::to_json() const {
    return {{"level", level_name(level)},
            {"rho", rho},
            {"base", base},
            {"base_text", vlm::render_text(base)},
            {"group", group},
            {"sequence", sequence},
            {"sequence_text", vlm::render_text(sequence)}};
}

RecallTarget RecallTarget::from_json(const nlohmann::json &j) {
    RecallTarget t;
    t.level = level_from_name(j.at("level").get<std::string>());
    t.rho = j.at("rho").get<int>();
    t.base = j.at("base").get<TokenSeq>();
    t.group = j.value("group", TokenSeq{});
    t.sequence = j.at("sequence").get<TokenSeq>();
    return t;
}

RecallTarget token_level_recall(const TokenSeq &base, int rho, bool allow_rho_zero) {
    require_clean_base(base);
    check(rho >= 1 || (allow_rho_zero && rho == 0), "token_level_recall: rho must be >= 1");
    RecallTarget t;
    t.level = Level::token;
    t.rho = rho;
    t.base = base;
    t.group = last_word_group(base);
    t.sequence = base;
    for (int r = 0; r < rho; ++r) t.sequence.insert(t.sequence.end(), t.group.begin(), t.group.end());
    return t;
}

RecallTarget sentence_level_recall(const TokenSeq &base, int rho) {
    require_clean_base(base);
    check(rho >= 1, "sentence_level_recall: rho must be >= 1");
    RecallTarget t;
    t.level = Level::sentence;
    t.rho = rho;
    t.base = base;
    t.sequence = base;
    for (int r = 1; r < rho; ++r) {
        t.sequence.push_back(' ');
        t.sequence.insert(t.sequence.end(), base.begin(), base.end());
    }
    return t;
}

}  // namespace looplab::recall
