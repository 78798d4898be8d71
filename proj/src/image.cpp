// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/image.hpp"

#include <cmath>
#include <fstream>

namespace looplab::vlm {

void validate_image(const Image &img) {
    check(img.height > 0 && img.width > 0 && img.channels > 0, "image: empty geometry");
    check(img.pixels.size() == img.height * img.width * img.channels, "image: pixel count mismatch");
    for (double p : img.pixels) {
        check(p >= 0.0 && p <= 1.0 && std::isfinite(p), "image: pixel value " + std::to_string(p) + " outside [0,1]");
    }
}

Image quantized(const Image &img) {
    Image q = img;
    for (double &p : q.pixels) {
        const int byte = static_cast<int>(std::lround(p * 255.0));
        p = static_cast<double>(std::min(255, std::max(0, byte))) / 255.0;
    }
    return q;
}

void write_ppm(const std::string &path, const Image &img) {
    check(img.channels == 3, "ppm: image must have 3 channels, got " + std::to_string(img.channels));
    validate_image(img);
    std::ofstream out(path, std::ios::binary);
    check(out.good(), "ppm: cannot open '" + path + "' for writing");
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    for (double p : img.pixels) {
        const int byte = static_cast<int>(std::lround(p * 255.0));
        out.put(static_cast<char>(std::min(255, std::max(0, byte))));
    }
    check(out.good(), "ppm: write failed for '" + path + "'");
}

Image read_ppm(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    check(in.good(), "ppm: cannot open '" + path + "'");
    std::string magic;
    in >> magic;
    check(magic == "P6", "ppm: bad magic in '" + path + "'");
    std::size_t w = 0, h = 0;
    int maxval = 0;
    in >> w >> h >> maxval;
    check(in.good() && w > 0 && h > 0 && maxval == 255, "ppm: bad header in '" + path + "'");
    in.get();  // single whitespace after maxval
    Image img(h, w, 3);
    for (double &p : img.pixels) {
        const int byte = in.get();
        check(byte != EOF, "ppm: truncated pixel data in '" + path + "'");
        p = static_cast<double>(byte) / 255.0;
    }
    return img;
}

}  // namespace looplab::vlm
