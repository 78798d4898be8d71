// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/synth.hpp"

#include <cmath>

namespace looplab::synth {

// Muted palette, kept inside [0.2, 0.8]: every pixel then leaves the full
// perturbation budget available on both sides before the [0,1] box clips.
const std::vector<ColorDef> &colors() {
    static const std::vector<ColorDef> c = {
        {"red", {0.78, 0.22, 0.22}},    {"green", {0.22, 0.72, 0.25}},  {"blue", {0.25, 0.30, 0.78}},
        {"yellow", {0.80, 0.75, 0.20}}, {"purple", {0.60, 0.25, 0.70}}, {"orange", {0.80, 0.55, 0.20}},
        {"cyan", {0.20, 0.70, 0.75}},   {"pink", {0.80, 0.50, 0.65}},   {"brown", {0.55, 0.40, 0.25}},
        {"gray", {0.50, 0.50, 0.50}},
    };
    return c;
}

// The "white" background is likewise kept off the pixel ceiling.
constexpr double kBackgroundValue = 0.82;

const std::vector<std::string> &shapes() {
    static const std::vector<std::string> s = {"circle", "square", "triangle", "cross", "ring"};
    return s;
}

namespace {

bool inside_shape(const std::string &shape, double dx, double dy, double r) {
    const double d2 = dx * dx + dy * dy;
    if (shape == "circle") return d2 <= r * r;
    if (shape == "square") return std::fabs(dx) <= r * 0.85 && std::fabs(dy) <= r * 0.85;
    if (shape == "triangle") {
        if (dy < -r || dy > r) return false;
        const double half_width = (dy + r) / (2.0 * r) * r;
        return std::fabs(dx) <= half_width;
    }
    if (shape == "cross") {
        const double arm = r * 0.38;
        return (std::fabs(dx) <= arm && std::fabs(dy) <= r) || (std::fabs(dy) <= arm && std::fabs(dx) <= r);
    }
    if (shape == "ring") {
        const double inner = r * 0.55;
        return d2 <= r * r && d2 >= inner * inner;
    }
    throw Error("synth: unknown shape '" + shape + "'");
}

}  // namespace

Sample make_sample(const vlm::ModelConfig &cfg, std::size_t color_idx, std::size_t shape_idx, Rng &rng) {
    check(color_idx < colors().size(), "synth: color index out of range");
    check(shape_idx < shapes().size(), "synth: shape index out of range");
    const ColorDef &color = colors()[color_idx];
    const std::string &shape = shapes()[shape_idx];

    Sample s;
    s.color = color.name;
    s.shape = shape;
    s.category = color_idx;
    s.image = vlm::Image(cfg.image_h, cfg.image_w, cfg.channels);

    const double cx = static_cast<double>(cfg.image_w) / 2.0 + uniform(rng, -5.0, 5.0);
    const double cy = static_cast<double>(cfg.image_h) / 2.0 + uniform(rng, -5.0, 5.0);
    const double r = uniform(rng, 8.0, 11.0);

    // half the captions carry a grounded position suffix, so the token after
    // "background" is genuinely uncertain rather than always end-of-text
    s.caption = "a " + color.name + " " + shape + " on a white background";
    if (rng() % 2 == 0) {
        const double dx = cx - static_cast<double>(cfg.image_w) / 2.0;
        const double dy = cy - static_cast<double>(cfg.image_h) / 2.0;
        std::string where = "in the middle";
        if (std::fabs(dx) >= std::fabs(dy) && std::fabs(dx) > 2.0) {
            where = dx < 0 ? "on the left" : "on the right";
        } else if (std::fabs(dy) > 2.0) {
            where = dy < 0 ? "near the top" : "near the bottom";
        }
        s.caption += " " + where;
    }

    for (std::size_t y = 0; y < cfg.image_h; ++y) {
        for (std::size_t x = 0; x < cfg.image_w; ++x) {
            const bool in = inside_shape(shape, static_cast<double>(x) - cx, static_cast<double>(y) - cy, r);
            for (std::size_t c = 0; c < cfg.channels; ++c) {
                s.image.at(y, x, c) = in ? color.rgb[c % 3] : kBackgroundValue;
            }
        }
    }
    return s;
}

std::vector<Sample> make_corpus(const vlm::ModelConfig &cfg, std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t color_idx = i % colors().size();
        const std::size_t shape_idx = static_cast<std::size_t>(rng() % shapes().size());
        out.push_back(make_sample(cfg, color_idx, shape_idx, rng));
    }
    return out;
}

}  // namespace looplab::synth
