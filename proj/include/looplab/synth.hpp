// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "looplab/image.hpp"
#include "looplab/model.hpp"

namespace looplab::synth {

// 10 color categories x 5 shapes, captioned
// "a <color> <shape> on a white background".
struct ColorDef {
    std::string name;
    std::array<double, 3> rgb;
};

const std::vector<ColorDef> &colors();
const std::vector<std::string> &shapes();

struct Sample {
    vlm::Image image;
    std::string caption;
    std::string color;
    std::string shape;
    std::size_t category = 0;  // color index
};

Sample make_sample(const vlm::ModelConfig &cfg, std::size_t color_idx, std::size_t shape_idx, Rng &rng);

// Colors round-robin (uniform within +-1), shapes drawn uniformly.
std::vector<Sample> make_corpus(const vlm::ModelConfig &cfg, std::size_t count, std::uint64_t seed);

}  // namespace looplab::synth
