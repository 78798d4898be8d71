// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>

#include "looplab/metrics.hpp"

using namespace looplab;
using metrics::LoopVerdict;
using vlm::TokenSeq;

namespace {

// Independent oracle: try every period and every suffix length directly.
LoopVerdict brute_force_loop(const TokenSeq &tokens, std::size_t max_period, std::size_t min_repeats) {
    LoopVerdict v;
    v.output_length = tokens.size();
    const std::size_t n = tokens.size();
    for (std::size_t p = 1; p <= max_period; ++p) {
        if (n < min_repeats * p) continue;
        bool periodic = true;
        for (std::size_t i = n - min_repeats * p; i + p < n; ++i) {
            if (tokens[i] != tokens[i + p]) {
                periodic = false;
                break;
            }
        }
        if (!periodic) continue;
        // extend the suffix as far as periodicity holds
        std::size_t s = min_repeats * p;
        while (s < n && tokens[n - s - 1] == tokens[n - s - 1 + p]) ++s;
        v.looping = true;
        v.period = p;
        v.repeats = s / p;
        return v;
    }
    return v;
}

TokenSeq random_tail_sequence(Rng &rng) {
    TokenSeq t;
    const std::size_t head = rng() % 30;
    for (std::size_t i = 0; i < head; ++i) t.push_back(static_cast<vlm::Token>(rng() % 6));
    if (rng() % 2 == 0) {
        // plant a periodic tail
        const std::size_t p = 1 + rng() % 8;
        TokenSeq unit;
        for (std::size_t i = 0; i < p; ++i) unit.push_back(static_cast<vlm::Token>(rng() % 6));
        const std::size_t reps = 1 + rng() % 6;
        for (std::size_t r = 0; r < reps; ++r) t.insert(t.end(), unit.begin(), unit.end());
    }
    return t;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("detect_loop finds a constructed periodic tail") {
    const TokenSeq t = {9, 9, 1, 2, 3, 1, 2, 3, 1, 2, 3};
    const LoopVerdict v = metrics::detect_loop(t, 64, 3);
    CHECK(v.looping);
    CHECK(v.period == 3);
    CHECK(v.repeats == 3);
    CHECK(v.output_length == t.size());
}

TEST_CASE("strictly increasing ids never loop") {
    TokenSeq t;
    for (int i = 0; i < 50; ++i) t.push_back(i);
    CHECK(!metrics::detect_loop(t).looping);
}

TEST_CASE("detect_loop validates parameters") {
    CHECK_THROWS_AS(metrics::detect_loop({1, 2}, 0, 3), Error);
    CHECK_THROWS_AS(metrics::detect_loop({1, 2}, 4, 1), Error);
}

TEST_CASE("detect_loop equals the brute-force oracle on random sequences") {
    Rng rng(51);
    for (int trial = 0; trial < 300; ++trial) {
        const TokenSeq t = random_tail_sequence(rng);
        const LoopVerdict fast = metrics::detect_loop(t, 16, 3);
        const LoopVerdict slow = brute_force_loop(t, 16, 3);
        CHECK(fast.looping == slow.looping);
        CHECK(fast.period == slow.period);
        CHECK(fast.repeats == slow.repeats);
    }
}

TEST_CASE("asr is the looping fraction and rejects empty input") {
    LoopVerdict yes;
    yes.looping = true;
    LoopVerdict no;
    CHECK(metrics::asr({yes, yes}) == 1.0);
    CHECK(metrics::asr({no, no}) == 0.0);
    CHECK(metrics::asr({yes, no}) == 0.5);
    CHECK_THROWS_AS(metrics::asr({}), Error);
}

TEST_CASE("asr is permutation invariant") {
    Rng rng(53);
    std::vector<LoopVerdict> verdicts(9);
    for (auto &v : verdicts) v.looping = rng() % 2 == 0;
    const double before = metrics::asr(verdicts);
    std::shuffle(verdicts.begin(), verdicts.end(), rng);
    CHECK(metrics::asr(verdicts) == before);
}

TEST_CASE("length stats summarize trace lengths") {
    auto trace = [](std::size_t len, std::size_t window) {
        vlm::DecodeTrace t;
        t.tokens.assign(len, 1);
        t.window = window;
        return t;
    };
    const metrics::LengthStats one = metrics::length_stats({trace(40, 64)});
    CHECK(one.mean == 40.0);
    CHECK(one.median == 40.0);
    CHECK(one.max == 40);
    const metrics::LengthStats two = metrics::length_stats({trace(10, 64), trace(30, 64)});
    CHECK(two.mean == 20.0);
    CHECK(two.median == 20.0);
    const metrics::LengthStats full = metrics::length_stats({trace(64, 64), trace(64, 64)});
    CHECK(full.fraction_at_window == 1.0);
    CHECK_THROWS_AS(metrics::length_stats({}), Error);
}

TEST_CASE("logit tendency reports a constant gap for constant logits") {
    vlm::DecodeTrace t;
    t.tokens = {5, 5, 5};
    for (int i = 0; i < 3; ++i) t.topk.push_back({{5, 2.0}, {7, 0.5}});
    const auto rows = metrics::logit_tendency(t, {5});
    REQUIRE(rows.size() == 3);
    for (const auto &r : rows) {
        CHECK(r.gap == doctest::Approx(1.5));
        CHECK(r.top1_is_target);
    }
    const auto no_unit = metrics::logit_tendency(t);
    for (const auto &r : no_unit) CHECK(!r.top1_is_target);
}

TEST_CASE("logit tendency requires top-k records") {
    vlm::DecodeTrace t;
    t.tokens = {1};
    t.topk.push_back({{1, 2.0}});  // only k=1 recorded
    CHECK_THROWS_AS(metrics::logit_tendency(t), Error);
}

TEST_CASE("spearman correlation behaves on monotone series") {
    const std::vector<double> x = {1, 2, 3, 4, 5};
    CHECK(metrics::spearman(x, {2, 4, 5, 7, 11}) == doctest::Approx(1.0));
    CHECK(metrics::spearman(x, {5, 4, 3, 2, 1}) == doctest::Approx(-1.0));
    CHECK(metrics::spearman(x, {3, 3, 3, 3, 3}) == 0.0);
}

TEST_CASE("verdict_for_trace requires both the window hit and the loop") {
    vlm::DecodeTrace t;
    t.window = 12;
    t.tokens = {1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2};
    t.ended_with_eos = false;
    CHECK(metrics::verdict_for_trace(t).hit_max_window);
    t.ended_with_eos = true;  // EOS at the window edge: not an unbounded hit
    CHECK(!metrics::verdict_for_trace(t).hit_max_window);
    vlm::DecodeTrace aperiodic;
    aperiodic.window = 6;
    aperiodic.tokens = {1, 2, 3, 4, 5, 6};
    CHECK(!metrics::verdict_for_trace(aperiodic).hit_max_window);
}

TEST_CASE("fast_verify validates the window split") {
    const vlm::ModelConfig c;
    const vlm::ModelWeights w = vlm::ModelWeights::random(c, 61);
    const vlm::PixelFeatures f = vlm::processor(c, vlm::Image(32, 32, 3));
    vlm::DecodeConfig dc;
    CHECK_THROWS_AS(metrics::fast_verify(w, f, {}, dc, 128, 128), Error);
}

}  // TEST_SUITE
