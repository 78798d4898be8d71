// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "looplab/common.hpp"

namespace looplab::vlm {

// Pixel grid with channel-interleaved rows, every value in [0,1].
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t channels = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(std::size_t h, std::size_t w, std::size_t c)
        : height(h), width(w), channels(c), pixels(h * w * c, 0.0) {}

    double &at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
    double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
    std::size_t size() const { return pixels.size(); }
};

void validate_image(const Image &img);

// Snap every channel to the 8-bit grid the pixmap writer uses. Attack
// evaluation decodes from quantized images so reported results survive the
// file round-trip.
Image quantized(const Image &img);

// Binary portable pixmap (P6, maxval 255); requires 3 channels.
void write_ppm(const std::string &path, const Image &img);
Image read_ppm(const std::string &path);

}  // namespace looplab::vlm
