// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/tensor.hpp"

#include <cmath>
#include <sstream>

namespace looplab::ad {

std::size_t shape_product(const std::vector<std::size_t> &shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check(data_.size() == shape_product(shape_),
          "tensor: data length " + std::to_string(data_.size()) + " does not match shape " + shape_str());
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    for (double &x : t.data_) x = value;
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double x : data_) m = std::max(m, std::fabs(x));
    return m;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << "x";
        os << shape_[i];
    }
    os << "]";
    return os.str();
}

namespace {

void require_2d(const Tensor &t, const char *op, const char *arg) {
    check(t.rank() == 2, std::string(op) + ": " + arg + " must be rank-2, got " + t.shape_str());
}

}  // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
    require_2d(a, "matmul", "lhs");
    require_2d(b, "matmul", "rhs");
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    check(b.rows() == k, "matmul: shape mismatch " + a.shape_str() + " * " + b.shape_str());
    Tensor c({m, n});
    const double *pa = a.data();
    const double *pb = b.data();
    double *pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        double *ci = pc + i * n;
        for (std::size_t t = 0; t < k; ++t) {
            const double av = pa[i * k + t];
            if (av == 0.0) continue;
            const double *bt = pb + t * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
    return c;
}

Tensor matmul_bt(const Tensor &a, const Tensor &b) {
    require_2d(a, "matmul_bt", "lhs");
    require_2d(b, "matmul_bt", "rhs");
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    check(b.cols() == k, "matmul_bt: shape mismatch " + a.shape_str() + " * " + b.shape_str() + "^T");
    Tensor c({m, n});
    const double *pa = a.data();
    const double *pb = b.data();
    double *pc = c.data();
    for (std::size_t i = 0; i < m; ++i) {
        const double *ai = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double *bj = pb + j * k;
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t) s += ai[t] * bj[t];
            pc[i * n + j] = s;
        }
    }
    return c;
}

Tensor matmul_at(const Tensor &a, const Tensor &b) {
    require_2d(a, "matmul_at", "lhs");
    require_2d(b, "matmul_at", "rhs");
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    check(b.rows() == k, "matmul_at: shape mismatch " + a.shape_str() + "^T * " + b.shape_str());
    Tensor c({m, n});
    const double *pa = a.data();
    const double *pb = b.data();
    double *pc = c.data();
    for (std::size_t t = 0; t < k; ++t) {
        const double *at = pa + t * m;
        const double *bt = pb + t * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = at[i];
            if (av == 0.0) continue;
            double *ci = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
    return c;
}

Tensor add(const Tensor &a, const Tensor &b) {
    check(a.same_shape(b), "add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
    return c;
}

Tensor sub(const Tensor &a, const Tensor &b) {
    check(a.same_shape(b), "sub: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
    return c;
}

Tensor scale(const Tensor &a, double c) {
    Tensor r = a;
    for (double &x : r.vec()) x *= c;
    return r;
}

Tensor hadamard(const Tensor &a, const Tensor &b) {
    check(a.same_shape(b), "hadamard: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
    Tensor c = a;
    for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
    return c;
}

Tensor random_uniform(std::vector<std::size_t> shape, double lo, double hi, Rng &rng) {
    Tensor t(std::move(shape));
    for (double &x : t.vec()) x = uniform(rng, lo, hi);
    return t;
}

Tensor random_gaussian(std::vector<std::size_t> shape, double mean, double stddev, Rng &rng) {
    Tensor t(std::move(shape));
    for (double &x : t.vec()) x = gaussian(rng, mean, stddev);
    return t;
}

}  // namespace looplab::ad
