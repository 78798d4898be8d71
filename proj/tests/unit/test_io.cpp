// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "looplab/image.hpp"
#include "looplab/tensor_io.hpp"

using namespace looplab;
using ad::Tensor;

namespace {

std::string tmp_path(const std::string &name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("io") {

TEST_CASE("tensor container round-trips bit-exactly") {
    Rng rng(7);
    const Tensor a = ad::random_gaussian({5, 3}, 0.0, 1.0, rng);
    const Tensor b = ad::random_gaussian({2, 2}, 0.0, 1.0, rng);
    const std::string path = tmp_path("ll_io_roundtrip.lptn");
    io::save_tensors(path, {{"a", a}, {"b", b}}, {{"note", 42}});
    const io::TensorFile f = io::load_tensors(path);
    CHECK(f.config.at("note") == 42);
    REQUIRE(f.tensors.size() == 2);
    CHECK(f.get("a").same_shape(a));
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(f.get("a")[i] == a[i]);
    for (std::size_t i = 0; i < b.size(); ++i) CHECK(f.get("b")[i] == b[i]);
    CHECK_THROWS_AS(f.get("missing"), Error);
    std::remove(path.c_str());
}

TEST_CASE("corrupted magic is rejected") {
    const std::string path = tmp_path("ll_io_magic.lptn");
    io::save_tensor(path, Tensor({2, 2}));
    {
        std::fstream fs(path, std::ios::in | std::ios::out | std::ios::binary);
        fs.seekp(0);
        fs.write("XXXX", 4);
    }
    CHECK_THROWS_WITH_AS(io::load_tensor(path), doctest::Contains("magic"), Error);
    std::remove(path.c_str());
}

TEST_CASE("version mismatch is rejected") {
    const std::string path = tmp_path("ll_io_version.lptn");
    io::save_tensor(path, Tensor({1, 1}));
    // rewrite the header with a bumped version, keeping lengths identical
    std::string contents;
    {
        std::ifstream in(path, std::ios::binary);
        contents.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    const std::string needle = "\"version\":1";
    const auto pos = contents.find(needle);
    REQUIRE(pos != std::string::npos);
    contents[pos + needle.size() - 1] = '9';
    {
        std::ofstream out(path, std::ios::binary);
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    }
    CHECK_THROWS_WITH_AS(io::load_tensor(path), doctest::Contains("version"), Error);
    std::remove(path.c_str());
}

TEST_CASE("missing file errors cleanly") {
    CHECK_THROWS_AS(io::load_tensor(tmp_path("ll_io_does_not_exist.lptn")), Error);
}

TEST_CASE("quantized image snaps to the 8-bit grid") {
    vlm::Image img(2, 2, 3);
    img.pixels = {0.0, 0.5, 1.0, 0.123, 0.9999, 0.0004, 0.25, 0.75, 0.33, 0.66, 0.1, 0.9};
    const vlm::Image q = vlm::quantized(img);
    for (double p : q.pixels) {
        const double scaled = p * 255.0;
        CHECK(std::fabs(scaled - std::round(scaled)) < 1e-9);
    }
    // quantization error is at most half a bucket
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(std::fabs(q.pixels[i] - img.pixels[i]) <= 0.5 / 255.0);
}

TEST_CASE("ppm round-trips quantized images exactly") {
    Rng rng(9);
    vlm::Image img(4, 6, 3);
    for (double &p : img.pixels) p = uniform(rng, 0.0, 1.0);
    img = vlm::quantized(img);
    const std::string path = tmp_path("ll_io_img.ppm");
    vlm::write_ppm(path, img);
    const vlm::Image back = vlm::read_ppm(path);
    REQUIRE(back.pixels.size() == img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-12));
    std::remove(path.c_str());
}

TEST_CASE("ppm reader rejects bad headers") {
    const std::string path = tmp_path("ll_io_bad.ppm");
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n2 2\n255\n";
    }
    CHECK_THROWS_AS(vlm::read_ppm(path), Error);
    std::remove(path.c_str());
}

TEST_CASE("image validation rejects out-of-range pixels") {
    vlm::Image img(1, 1, 3);
    img.pixels = {0.5, 1.5, 0.0};
    CHECK_THROWS_AS(vlm::validate_image(img), Error);
}

}  // TEST_SUITE
