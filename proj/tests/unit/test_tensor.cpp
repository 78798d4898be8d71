// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "looplab/tensor.hpp"

using namespace looplab;
using ad::Tensor;

TEST_SUITE("tensor") {

TEST_CASE("matmul of all-ones 2x3 and 3x2 gives 3.0 everywhere") {
    const Tensor a = Tensor::full({2, 3}, 1.0);
    const Tensor b = Tensor::full({3, 2}, 1.0);
    const Tensor c = ad::matmul(a, b);
    REQUIRE(c.shape() == std::vector<std::size_t>{2, 2});
    for (std::size_t i = 0; i < c.size(); ++i) CHECK(c[i] == doctest::Approx(3.0));
}

TEST_CASE("matmul shape mismatch names the shapes") {
    const Tensor a({2, 3});
    const Tensor b({2, 2});
    CHECK_THROWS_WITH_AS(ad::matmul(a, b), doctest::Contains("matmul"), Error);
}

TEST_CASE("matmul_bt and matmul_at agree with explicit transposition") {
    Rng rng(11);
    const Tensor a = ad::random_gaussian({4, 5}, 0.0, 1.0, rng);
    const Tensor b = ad::random_gaussian({3, 5}, 0.0, 1.0, rng);
    // bt: a * b^T
    Tensor bt({5, 3});
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 5; ++j) bt(j, i) = b(i, j);
    const Tensor want = ad::matmul(a, bt);
    const Tensor got = ad::matmul_bt(a, b);
    REQUIRE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));

    const Tensor c = ad::random_gaussian({4, 6}, 0.0, 1.0, rng);
    Tensor at({5, 4});
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 5; ++j) at(j, i) = a(i, j);
    const Tensor want2 = ad::matmul(at, c);
    const Tensor got2 = ad::matmul_at(a, c);
    REQUIRE(got2.same_shape(want2));
    for (std::size_t i = 0; i < got2.size(); ++i) CHECK(got2[i] == doctest::Approx(want2[i]).epsilon(1e-12));
}

TEST_CASE("constructor rejects data/shape mismatch") {
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), Error);
}

TEST_CASE("elementwise helpers check shapes") {
    CHECK_THROWS_AS(ad::add(Tensor({2, 2}), Tensor({2, 3})), Error);
    CHECK_THROWS_AS(ad::hadamard(Tensor({1, 2}), Tensor({2, 1})), Error);
}

}  // TEST_SUITE
