// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "looplab/attack.hpp"
#include "looplab/synth.hpp"

using namespace looplab;
using ad::Tensor;
using attack::AttackConfig;
using vlm::ModelConfig;
using vlm::ModelWeights;
using vlm::TokenSeq;

namespace {

ModelConfig mini_config() {
    ModelConfig c;
    c.image_h = 16;
    c.image_w = 16;
    c.patch = 8;
    c.embed_dim = 32;
    c.layers = 2;
    c.heads = 4;
    c.ff_dim = 64;
    c.max_context = 128;
    return c;
}

struct Fixture {
    ModelConfig config = mini_config();
    ModelWeights weights = ModelWeights::random(config, 21);
    vlm::Image image;
    TokenSeq question = vlm::tokenize("see");
    recall::RecallTarget target = recall::token_level_recall(vlm::tokenize("one two"), 3);

    Fixture() {
        Rng rng(22);
        image = synth::make_sample(config, 2, 1, rng).image;
    }
};

}  // namespace

TEST_SUITE("attack") {

TEST_CASE("project clamps to the epsilon ball and the data box") {
    const Tensor f = Tensor::full({2, 3}, 0.0);
    SUBCASE("delta beyond epsilon is clamped to epsilon") {
        const attack::Perturbation p = attack::project(Tensor::full({2, 3}, 0.6), 0.3, f);
        for (double v : p.vec()) CHECK(v == 0.3);
    }
    SUBCASE("feasible delta is unchanged (idempotence)") {
        Rng rng(1);
        attack::Perturbation d = ad::random_uniform({2, 3}, -0.2, 0.2, rng);
        const attack::Perturbation once = attack::project(d, 0.3, f);
        for (std::size_t i = 0; i < d.size(); ++i) CHECK(once[i] == d[i]);
        const attack::Perturbation twice = attack::project(once, 0.3, f);
        for (std::size_t i = 0; i < d.size(); ++i) CHECK(twice[i] == once[i]);
    }
    SUBCASE("box boundary forces delta to zero") {
        const Tensor at_top = Tensor::full({2, 3}, 1.0);
        const attack::Perturbation p = attack::project(Tensor::full({2, 3}, 0.3), 0.3, at_top);
        for (double v : p.vec()) CHECK(v == 0.0);
    }
    SUBCASE("projection output is always exactly feasible") {
        Rng rng(2);
        for (int trial = 0; trial < 200; ++trial) {
            const Tensor feats = ad::random_uniform({2, 3}, -1.0, 1.0, rng);
            const attack::Perturbation d =
                attack::project(ad::random_uniform({2, 3}, -2.0, 2.0, rng), 0.3, feats);
            for (std::size_t i = 0; i < d.size(); ++i) {
                CHECK(std::fabs(d[i]) <= 0.3);
                CHECK(feats[i] + d[i] <= 1.0);
                CHECK(feats[i] + d[i] >= -1.0);
            }
        }
    }
}

TEST_CASE("recall loss of an empty target is zero with a zero gradient") {
    const Fixture fx;
    recall::RecallTarget empty;
    const auto [loss, grad] = attack::recall_loss(fx.weights, vlm::processor(fx.config, fx.image), fx.question, empty);
    CHECK(loss == 0.0);
    CHECK(grad.max_abs() == 0.0);
}

TEST_CASE("recall loss gradient matches finite differences") {
    const Fixture fx;
    const vlm::PixelFeatures f = vlm::processor(fx.config, fx.image);
    auto scalar = [&](const Tensor &p) {
        return attack::recall_loss(fx.weights, p, fx.question, fx.target).first;
    };
    const auto [loss, grad] = attack::recall_loss(fx.weights, f, fx.question, fx.target);
    CHECK(loss > 0.0);
    Rng rng(31);
    CHECK(ad::finite_diff_check(scalar, grad, f, 1e-5, 20, rng) < 1e-3);
}

TEST_CASE("K=0 yields only the initial loss and the quantized original image") {
    const Fixture fx;
    AttackConfig cfg;
    cfg.max_iters = 0;
    const attack::SingleAttackResult r = attack::pgd_attack(fx.weights, fx.image, fx.question, fx.target, cfg);
    REQUIRE(r.report.loss_trace.size() == 1);
    CHECK(r.report.iterations_run == 0);
    CHECK(r.delta.max_abs() == 0.0);
    const vlm::Image expected = vlm::quantized(fx.image);
    REQUIRE(r.adversarial.pixels.size() == expected.pixels.size());
    for (std::size_t i = 0; i < expected.pixels.size(); ++i) CHECK(r.adversarial.pixels[i] == expected.pixels[i]);
}

TEST_CASE("epsilon zero keeps the image unchanged") {
    const Fixture fx;
    AttackConfig cfg;
    cfg.epsilon = 0.0;
    cfg.step_size = 0.02;
    cfg.max_iters = 5;
    cfg.early_stop_loss = 0.0;
    const attack::SingleAttackResult r = attack::pgd_attack(fx.weights, fx.image, fx.question, fx.target, cfg);
    CHECK(r.delta.max_abs() == 0.0);
    const vlm::Image expected = vlm::quantized(fx.image);
    for (std::size_t i = 0; i < expected.pixels.size(); ++i) CHECK(r.adversarial.pixels[i] == expected.pixels[i]);
}

TEST_CASE("loss trace length matches iterations plus the initial entry") {
    const Fixture fx;
    AttackConfig cfg;
    cfg.max_iters = 7;
    cfg.early_stop_loss = 0.0;  // force the full run
    const attack::SingleAttackResult r = attack::pgd_attack(fx.weights, fx.image, fx.question, fx.target, cfg);
    CHECK(r.report.iterations_run == 7);
    CHECK(r.report.loss_trace.size() == 8);
    CHECK(r.report.feasibility_violations == 0);
    double min_loss = r.report.loss_trace[0];
    for (double v : r.report.loss_trace) min_loss = std::min(min_loss, v);
    CHECK(min_loss <= r.report.loss_trace[0]);
}

TEST_CASE("fixed seed reproduces the loss trace bit-exactly") {
    const Fixture fx;
    AttackConfig cfg;
    cfg.max_iters = 6;
    cfg.init = AttackConfig::Init::uniform;
    cfg.seed = 99;
    cfg.early_stop_loss = 0.0;
    const auto a = attack::pgd_attack(fx.weights, fx.image, fx.question, fx.target, cfg);
    const auto b = attack::pgd_attack(fx.weights, fx.image, fx.question, fx.target, cfg);
    REQUIRE(a.report.loss_trace.size() == b.report.loss_trace.size());
    for (std::size_t i = 0; i < a.report.loss_trace.size(); ++i)
        CHECK(a.report.loss_trace[i] == b.report.loss_trace[i]);
    for (std::size_t i = 0; i < a.delta.size(); ++i) CHECK(a.delta[i] == b.delta[i]);
}

TEST_CASE("PGD reduces the recall loss on most random models") {
    std::size_t improved = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const ModelConfig c = mini_config();
        const ModelWeights w = ModelWeights::random(c, 300 + seed);
        Rng rng(400 + seed);
        const vlm::Image img = synth::make_sample(c, seed % 10, seed % 5, rng).image;
        AttackConfig cfg;
        cfg.max_iters = 60;
        cfg.early_stop_loss = 0.0;
        const auto r = attack::pgd_attack(w, img, vlm::tokenize("see"),
                                          recall::token_level_recall(vlm::tokenize("one two"), 3), cfg);
        if (r.report.final_loss < r.report.loss_trace[0]) ++improved;
    }
    CHECK(improved >= 4);
}

TEST_CASE("universal attack with B=1 reproduces the single-sample attack bit-exactly") {
    const Fixture fx;
    AttackConfig cfg;
    cfg.max_iters = 10;
    cfg.early_stop_loss = 0.0;
    cfg.seed = 5;
    const attack::SingleAttackResult single = attack::pgd_attack(fx.weights, fx.image, fx.question, fx.target, cfg);
    const attack::UniversalAttackResult uni =
        attack::universal_pgd(fx.weights, {fx.image}, {fx.question}, {fx.target}, cfg);
    REQUIRE(uni.reports.size() == 1);
    REQUIRE(uni.delta.size() == single.delta.size());
    for (std::size_t i = 0; i < uni.delta.size(); ++i) CHECK(uni.delta[i] == single.delta[i]);
    REQUIRE(uni.reports[0].loss_trace.size() == single.report.loss_trace.size());
    for (std::size_t i = 0; i < uni.reports[0].loss_trace.size(); ++i)
        CHECK(uni.reports[0].loss_trace[i] == single.report.loss_trace[i]);
}

TEST_CASE("universal delta is feasible for every batch member") {
    const ModelConfig c = mini_config();
    const ModelWeights w = ModelWeights::random(c, 23);
    std::vector<vlm::Image> images;
    std::vector<TokenSeq> questions;
    std::vector<recall::RecallTarget> targets;
    Rng rng(24);
    for (std::size_t b = 0; b < 3; ++b) {
        images.push_back(synth::make_sample(c, b, b % 5, rng).image);
        questions.push_back(vlm::tokenize("see"));
        targets.push_back(recall::token_level_recall(vlm::tokenize("one two"), 2));
    }
    AttackConfig cfg;
    cfg.max_iters = 8;
    cfg.early_stop_loss = 0.0;
    const attack::UniversalAttackResult uni = attack::universal_pgd(w, images, questions, targets, cfg);
    CHECK(uni.reports.size() == 3);
    for (const attack::AttackReport &r : uni.reports) CHECK(r.feasibility_violations == 0);
    for (const vlm::Image &img : images) {
        const vlm::PixelFeatures f = vlm::processor(c, img);
        for (std::size_t i = 0; i < f.size(); ++i) {
            CHECK(std::fabs(uni.delta[i]) <= cfg.epsilon);
            CHECK(f[i] + uni.delta[i] <= 1.0);
            CHECK(f[i] + uni.delta[i] >= -1.0);
        }
    }
    // mean loss after K steps is below the initial mean loss
    CHECK(uni.mean_loss_trace.back() < uni.mean_loss_trace.front());
}

TEST_CASE("batch geometry mismatch is rejected") {
    const Fixture fx;
    ModelConfig other = mini_config();
    other.image_h = 32;
    other.image_w = 32;
    Rng rng(25);
    const vlm::Image big = synth::make_sample(other, 0, 0, rng).image;
    AttackConfig cfg;
    cfg.max_iters = 1;
    CHECK_THROWS_AS(
        attack::universal_pgd(fx.weights, {fx.image, big}, {fx.question, fx.question}, {fx.target, fx.target}, cfg),
        Error);
}

TEST_CASE("attack config validation") {
    AttackConfig cfg;
    cfg.step_size = 0.5;  // exceeds epsilon
    CHECK_THROWS_AS(cfg.validate(), Error);
    cfg = {};
    cfg.step_size = 0.0;
    CHECK_THROWS_AS(cfg.validate(), Error);
}

}  // TEST_SUITE
