// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>

#include "looplab/autodiff.hpp"

using namespace looplab;
using ad::Tape;
using ad::Tensor;
using ad::Var;

namespace {

// Builds loss = <op(x), R> for a fixed random R; checks the analytic gradient
// w.r.t. x against central differences. The op builder is handed a fresh
// same-seeded Rng on every call so its random constants replay identically.
double fd_probe(const std::function<Var(Tape &, Var, Rng &)> &op, const Tensor &point, Rng &rng) {
    const std::uint64_t op_seed = rng();
    Tensor weights;
    {
        Tape t;
        Rng op_rng(op_seed);
        Var y = op(t, t.leaf(point, true), op_rng);
        Rng w_rng(op_seed ^ 0xabcdef);
        weights = ad::random_gaussian(t.value(y).shape(), 0.0, 1.0, w_rng);
    }
    auto scalar = [&](const Tensor &p) {
        Tape t;
        Rng op_rng(op_seed);
        Var y = op(t, t.leaf(p, true), op_rng);
        return t.value(t.sum(t.hadamard(y, t.constant(weights))))[0];
    };
    Tape t;
    Rng op_rng(op_seed);
    Var x = t.leaf(point, true);
    Var loss = t.sum(t.hadamard(op(t, x, op_rng), t.constant(weights)));
    t.backward(loss);
    Rng coord_rng(rng());
    return ad::finite_diff_check(scalar, t.grad(x), point, 1e-5, point.size(), coord_rng);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("softmax of zeros is uniform") {
    Tape t;
    Var x = t.leaf(Tensor({1, 3}), true);
    Var y = t.softmax_rows(x);
    for (std::size_t i = 0; i < 3; ++i) CHECK(t.value(y)[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    Rng rng(3);
    for (int s = 0; s < 10; ++s) {
        Tape t;
        Var x = t.leaf(ad::random_gaussian({4, 7}, 0.0, 4.0, rng), true);
        const Tensor &y = t.value(t.softmax_rows(x));
        for (std::size_t r = 0; r < 4; ++r) {
            double total = 0.0;
            for (std::size_t c = 0; c < 7; ++c) total += y(r, c);
            CHECK(std::fabs(total - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("layer norm of a constant row is zero before the affine shift") {
    Tape t;
    Var x = t.leaf(Tensor::full({2, 5}, 3.7), true);
    Var g = t.leaf(Tensor::full({1, 5}, 1.0), true);
    Var b = t.leaf(Tensor({1, 5}), true);
    const Tensor &y = t.value(t.layer_norm(x, g, b));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(y[i] == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of uniform logits against one-hot is log V") {
    const std::size_t v = 11;
    Tape t;
    Var logits = t.leaf(Tensor({1, v}), true);
    Tensor target({1, v});
    target(0, 4) = 1.0;
    CHECK(t.value(t.cross_entropy(logits, target))[0] == doctest::Approx(std::log(double(v))).epsilon(1e-12));
}

TEST_CASE("cross entropy with a dominant correct logit is near zero") {
    Tape t;
    Tensor l({1, 8});
    l(0, 2) = 30.0;
    Var logits = t.leaf(l, true);
    Tensor target({1, 8});
    target(0, 2) = 1.0;
    CHECK(t.value(t.cross_entropy(logits, target))[0] < 1e-9);
}

TEST_CASE("cross entropy matches an independent scalar evaluation") {
    // oracle: direct -log softmax at the target index, computed by hand
    Rng rng(17);
    Tensor l = ad::random_gaussian({1, 8}, 0.0, 2.0, rng);
    const std::size_t idx = 5;
    double mx = l[0];
    for (std::size_t i = 1; i < 8; ++i) mx = std::max(mx, l[i]);
    double total = 0.0;
    for (std::size_t i = 0; i < 8; ++i) total += std::exp(l[i] - mx);
    const double expected = -((l[idx] - mx) - std::log(total));

    Tape t;
    Tensor target({1, 8});
    target(0, idx) = 1.0;
    CHECK(t.value(t.cross_entropy(t.leaf(l, true), target))[0] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects malformed targets") {
    Tape t;
    Var logits = t.leaf(Tensor({1, 4}), true);
    Tensor bad_sum = Tensor::full({1, 4}, 0.3);
    CHECK_THROWS_AS(t.cross_entropy(logits, bad_sum), Error);
    Tensor negative({1, 4});
    negative(0, 0) = 1.5;
    negative(0, 1) = -0.5;
    CHECK_THROWS_AS(t.cross_entropy(logits, negative), Error);
    CHECK_THROWS_AS(t.cross_entropy(logits, Tensor({1, 5})), Error);
}

TEST_CASE("backward of sum gives all-ones gradient") {
    Tape t;
    Var x = t.leaf(Tensor::full({3, 4}, 2.5), true);
    t.backward(t.sum(x));
    for (std::size_t i = 0; i < 12; ++i) CHECK(t.grad(x)[i] == 1.0);
}

TEST_CASE("backward of squared L2 norm gives 2x") {
    Rng rng(5);
    const Tensor p = ad::random_gaussian({2, 3}, 0.0, 1.0, rng);
    Tape t;
    Var x = t.leaf(p, true);
    t.backward(t.sum(t.hadamard(x, x)));
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(t.grad(x)[i] == doctest::Approx(2.0 * p[i]).epsilon(1e-12));
}

TEST_CASE("fan-out accumulates: grad of g(x)+g(x) equals twice grad of g") {
    Rng rng(6);
    const Tensor p = ad::random_gaussian({3, 3}, 0.0, 1.0, rng);
    Tensor grad_g;
    {
        Tape t;
        Var x = t.leaf(p, true);
        t.backward(t.sum(t.gelu(x)));
        grad_g = t.grad(x);
    }
    Tape t;
    Var x = t.leaf(p, true);
    Var g = t.gelu(x);
    t.backward(t.add(t.sum(g), t.sum(g)));
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(t.grad(x)[i] == doctest::Approx(2.0 * grad_g[i]).epsilon(1e-12));
}

TEST_CASE("backward rejects non-scalar losses") {
    Tape t;
    Var x = t.leaf(Tensor({2, 2}), true);
    CHECK_THROWS_AS(t.backward(x), Error);
}

TEST_CASE("every primitive matches central finite differences") {
    // dims <= 8, >= 10 seeds, relative error 1e-4
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        Rng rng(seed);
        const Tensor a = ad::random_gaussian({3, 4}, 0.0, 1.0, rng);
        const Tensor sq = ad::random_gaussian({4, 4}, 0.0, 1.0, rng);

        CHECK(fd_probe([](Tape &t, Var x, Rng &r) { return t.matmul(x, t.constant(ad::random_gaussian({4, 5}, 0.0, 1.0, r))); },
                       a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &r) { return t.matmul(t.constant(ad::random_gaussian({5, 3}, 0.0, 1.0, r)), x); },
                       a, rng) < 1e-4);
        CHECK(fd_probe(
                  [](Tape &t, Var x, Rng &r) { return t.matmul_bt(x, t.constant(ad::random_gaussian({6, 4}, 0.0, 1.0, r))); },
                  a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &r) { return t.add(x, t.constant(ad::random_gaussian({3, 4}, 0.0, 1.0, r))); },
                       a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &r) { return t.add_row(x, t.constant(ad::random_gaussian({1, 4}, 0.0, 1.0, r))); },
                       a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.scale(x, -1.7); }, a, rng) < 1e-4);
        CHECK(fd_probe(
                  [](Tape &t, Var x, Rng &r) { return t.hadamard(x, t.constant(ad::random_gaussian({3, 4}, 0.0, 1.0, r))); },
                  a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.gelu(x); }, a, rng) < 1e-4);
        CHECK(fd_probe(
                  [](Tape &t, Var x, Rng &r) {
                      return t.layer_norm(x, t.constant(ad::random_gaussian({1, 4}, 1.0, 0.2, r)),
                                          t.constant(ad::random_gaussian({1, 4}, 0.0, 0.2, r)));
                  },
                  a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.softmax_rows(x); }, a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.embedding(x, {0, 2, 2, 1}); }, a, rng) < 1e-4);
        CHECK(fd_probe(
                  [](Tape &t, Var x, Rng &r) {
                      return t.concat_rows({x, t.constant(ad::random_gaussian({2, 4}, 0.0, 1.0, r)), x});
                  },
                  a, rng) < 1e-4);
        CHECK(fd_probe(
                  [](Tape &t, Var x, Rng &r) {
                      return t.concat_cols({x, t.constant(ad::random_gaussian({3, 2}, 0.0, 1.0, r))});
                  },
                  a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.slice_rows(x, 1, 3); }, a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.slice_cols(x, 0, 2); }, a, rng) < 1e-4);
        CHECK(fd_probe([](Tape &t, Var x, Rng &) { return t.softmax_rows(t.causal_mask(x)); }, sq, rng) < 1e-4);

        // layer norm gradient w.r.t. gain and bias
        const Tensor g0 = ad::random_gaussian({1, 4}, 1.0, 0.2, rng);
        CHECK(fd_probe(
                  [&a](Tape &t, Var gv, Rng &) { return t.layer_norm(t.constant(a), gv, t.constant(Tensor({1, 4}))); },
                  g0, rng) < 1e-4);
        CHECK(fd_probe(
                  [&a](Tape &t, Var bv, Rng &) {
                      return t.layer_norm(t.constant(a), t.constant(Tensor::full({1, 4}, 1.0)), bv);
                  },
                  g0, rng) < 1e-4);

        // cross entropy w.r.t. logits
        Tensor target({3, 4});
        for (std::size_t r = 0; r < 3; ++r) target(r, static_cast<std::size_t>(rng() % 4)) = 1.0;
        CHECK(fd_probe([&target](Tape &t, Var x, Rng &) { return t.cross_entropy(x, target); }, a, rng) < 1e-4);
    }
}

TEST_CASE("finite_diff_check is exact for quadratics") {
    Rng rng(23);
    const Tensor p = ad::random_gaussian({2, 4}, 0.0, 1.0, rng);
    auto f = [](const Tensor &x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * x[i];
        return s;
    };
    Tensor grad = ad::scale(p, 2.0);
    CHECK(ad::finite_diff_check(f, grad, p, 1e-5, p.size(), rng) < 1e-6);
}

TEST_CASE("finite_diff_check of a constant function is zero") {
    Rng rng(29);
    const Tensor p = ad::random_gaussian({1, 6}, 0.0, 1.0, rng);
    auto f = [](const Tensor &) { return 4.0; };
    CHECK(ad::finite_diff_check(f, Tensor({1, 6}), p, 1e-5, p.size(), rng) == 0.0);
}

TEST_CASE("finite_diff_check validates inputs") {
    Rng rng(31);
    const Tensor p({1, 3});
    auto f = [](const Tensor &) { return 1.0; };
    CHECK_THROWS_AS(ad::finite_diff_check(f, Tensor({1, 3}), p, 0.0, 3, rng), Error);
    auto bad = [](const Tensor &) { return std::nan(""); };
    CHECK_THROWS_AS(ad::finite_diff_check(bad, Tensor({1, 3}), p, 1e-5, 3, rng), Error);
}

TEST_CASE("forward and backward keep values finite on finite inputs") {
    Rng rng(37);
    for (int s = 0; s < 5; ++s) {
        Tape t;
        Var x = t.leaf(ad::random_gaussian({4, 4}, 0.0, 2.0, rng), true);
        Var y = t.softmax_rows(t.causal_mask(t.matmul_bt(t.gelu(x), x)));
        Var loss = t.sum(t.matmul(y, x));
        t.backward(loss);
        CHECK(t.value(loss).all_finite());
        CHECK(t.grad(x).all_finite());
    }
}

}  // TEST_SUITE
