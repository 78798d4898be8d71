// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <map>

#include "looplab/defense.hpp"
#include "looplab/synth.hpp"

using namespace looplab;
using defense::DefenseConfig;
using vlm::TokenSeq;

namespace {

// Independent oracle: naive double loop over all k-gram occurrences.
std::pair<std::size_t, TokenSeq> naive_max_kgram(const TokenSeq &history, std::size_t window, std::size_t k) {
    const std::size_t start = history.size() > window ? history.size() - window : 0;
    if (history.size() - start < k) return {0, {}};
    std::size_t best = 0, best_last = 0;
    TokenSeq best_seg;
    for (std::size_t i = start; i + k <= history.size(); ++i) {
        const TokenSeq seg(history.begin() + static_cast<std::ptrdiff_t>(i),
                           history.begin() + static_cast<std::ptrdiff_t>(i + k));
        std::size_t count = 0, last = 0;
        for (std::size_t j = start; j + k <= history.size(); ++j) {
            if (std::equal(seg.begin(), seg.end(), history.begin() + static_cast<std::ptrdiff_t>(j))) {
                ++count;
                last = j;
            }
        }
        if (count > best || (count == best && last > best_last)) {
            best = count;
            best_last = last;
            best_seg = seg;
        }
    }
    return {best, best_seg};
}

}  // namespace

TEST_SUITE("defense") {

TEST_CASE("segment frequency counts a planted bigram loop") {
    const TokenSeq h = vlm::tokenize("ababab");
    const defense::SegmentFrequency sf = defense::max_segment_frequency(h, 6, 2);
    CHECK(sf.f_max == 3);
    CHECK(sf.segment == vlm::tokenize("ab"));
}

TEST_CASE("all-distinct history has frequency one") {
    const defense::SegmentFrequency sf = defense::max_segment_frequency({1, 2, 3, 4, 5}, 8, 2);
    CHECK(sf.f_max == 1);
}

TEST_CASE("short histories yield zero frequency") {
    const defense::SegmentFrequency sf = defense::max_segment_frequency({7}, 8, 3);
    CHECK(sf.f_max == 0);
    CHECK(sf.segment.empty());
}

TEST_CASE("segment frequency equals the naive k-gram oracle") {
    Rng rng(71);
    for (int trial = 0; trial < 300; ++trial) {
        TokenSeq h;
        const std::size_t n = rng() % 60;
        for (std::size_t i = 0; i < n; ++i) h.push_back(static_cast<vlm::Token>(rng() % 5));
        const std::size_t window = 1 + rng() % 48;
        const std::size_t k = 1 + rng() % 6;
        if (k > window) continue;
        const auto [want_count, want_seg] = naive_max_kgram(h, window, k);
        const defense::SegmentFrequency got = defense::max_segment_frequency(h, window, k);
        CHECK(got.f_max == want_count);
        CHECK(got.segment == want_seg);
    }
}

TEST_CASE("defended logits pass through when no repetition") {
    DefenseConfig cfg;
    const std::vector<double> logits = {1.0, -2.0, 3.0};
    SUBCASE("f_max <= 1") {
        CHECK(defense::defended_logits(logits, {1, 2, 3}, cfg) == logits);
    }
    SUBCASE("scale zero") {
        cfg.scale = 0.0;
        CHECK(defense::defended_logits(logits, {1, 1, 1, 1, 1, 1}, cfg) == logits);
    }
    SUBCASE("disabled") {
        cfg.enabled = false;
        CHECK(defense::defended_logits(logits, {1, 1, 1, 1, 1, 1}, cfg) == logits);
    }
}

TEST_CASE("defended logits apply the hand-computed rescale") {
    // planted loop of token 3; f_max = 3 with k=2, scale 0.5 -> factor 2.5
    DefenseConfig cfg;
    cfg.window = 16;
    cfg.segment_len = 2;
    cfg.scale = 0.5;
    const TokenSeq history = {3, 3, 3, 3};  // "3 3" occurs 3 times
    std::vector<double> logits(6, 0.0);
    logits[3] = 4.0;
    logits[1] = 1.0;
    logits[2] = -2.0;
    const std::vector<double> out = defense::defended_logits(logits, history, cfg);
    CHECK(out[3] == doctest::Approx(4.0 / 2.5));  // 1.6
    CHECK(out[1] == 1.0);
    CHECK(out[2] == -2.0);
}

TEST_CASE("suppression preserves signs and touches only segment ids") {
    Rng rng(73);
    DefenseConfig cfg;
    cfg.window = 32;
    cfg.segment_len = 3;
    cfg.scale = 2.0;
    for (int trial = 0; trial < 50; ++trial) {
        TokenSeq h;
        for (int i = 0; i < 24; ++i) h.push_back(static_cast<vlm::Token>(rng() % 4));
        std::vector<double> logits(8);
        for (double &l : logits) l = uniform(rng, -3.0, 3.0);
        const std::vector<double> out = defense::defended_logits(logits, h, cfg);
        const defense::SegmentFrequency sf = defense::max_segment_frequency(h, cfg.window, cfg.segment_len);
        std::map<vlm::Token, bool> in_segment;
        for (vlm::Token t : sf.segment) in_segment[t] = true;
        for (std::size_t i = 0; i < logits.size(); ++i) {
            CHECK((out[i] > 0) == (logits[i] > 0));
            CHECK((out[i] < 0) == (logits[i] < 0));
            if (!in_segment[static_cast<vlm::Token>(i)] || sf.f_max <= 1) {
                CHECK(out[i] == logits[i]);
            } else {
                // suppression never raises a logit: positives shrink toward
                // zero, negatives sink further down
                CHECK(out[i] <= logits[i]);
            }
        }
    }
}

TEST_CASE("literal scaling amplifies positive segment logits") {
    DefenseConfig cfg;
    cfg.window = 16;
    cfg.segment_len = 2;
    cfg.scale = 0.5;
    cfg.literal_scaling = true;
    std::vector<double> logits(6, 0.0);
    logits[3] = 4.0;
    const std::vector<double> out = defense::defended_logits(logits, {3, 3, 3, 3}, cfg);
    CHECK(out[3] == doctest::Approx(4.0 * 2.5));
}

TEST_CASE("disabled defense decodes identically to plain generation") {
    vlm::ModelConfig c;
    c.image_h = 16;
    c.image_w = 16;
    c.embed_dim = 32;
    c.layers = 1;
    c.heads = 4;
    c.ff_dim = 64;
    c.max_context = 96;
    const vlm::ModelWeights w = vlm::ModelWeights::random(c, 81);
    Rng rng(82);
    const synth::Sample s = synth::make_sample(c, 1, 1, rng);
    const vlm::PixelFeatures f = vlm::processor(c, s.image);
    vlm::DecodeConfig dc;
    dc.max_new_tokens = 32;
    DefenseConfig off;
    off.enabled = false;
    const vlm::DecodeTrace a = vlm::generate_features(w, f, vlm::tokenize("q"), dc);
    const vlm::DecodeTrace b = defense::defended_generate(w, f, vlm::tokenize("q"), dc, off);
    CHECK(a.tokens == b.tokens);
    REQUIRE(a.topk.size() == b.topk.size());
    for (std::size_t i = 0; i < a.topk.size(); ++i) {
        CHECK(a.topk[i][0].token == b.topk[i][0].token);
        CHECK(a.topk[i][0].logit == b.topk[i][0].logit);
    }
}

TEST_CASE("defense config validation") {
    DefenseConfig cfg;
    cfg.segment_len = 10;
    cfg.window = 4;
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.scale = -1.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("defense_eval rejects empty sets and reports a zero-scale column") {
    vlm::ModelConfig c;
    c.image_h = 16;
    c.image_w = 16;
    c.embed_dim = 32;
    c.layers = 1;
    c.heads = 4;
    c.ff_dim = 64;
    c.max_context = 96;
    const vlm::ModelWeights w = vlm::ModelWeights::random(c, 83);
    Rng rng(84);
    const synth::Sample s = synth::make_sample(c, 0, 0, rng);
    std::vector<defense::AttackedInput> set = {{vlm::processor(c, s.image), vlm::tokenize("q")}};
    CHECK_THROWS_AS(defense::defense_eval(w, {}, set, {8}, {2}, {1.0}, {}), Error);
    CHECK_THROWS_AS(defense::defense_eval(w, set, {}, {8}, {2}, {1.0}, {}), Error);

    vlm::DecodeConfig dc;
    dc.max_new_tokens = 24;
    const defense::DefenseGridReport grid = defense::defense_eval(w, set, set, {8}, {2}, {0.0, 1.0}, dc, 1);
    REQUIRE(grid.cells.size() == 2);
    CHECK(grid.cells[0].scale == 0.0);
    CHECK(grid.cells[0].attacked_reduction == 0.0);  // zero-scale column reduces nothing
    CHECK(grid.cells[0].benign_delta == 0.0);
}

}  // TEST_SUITE
