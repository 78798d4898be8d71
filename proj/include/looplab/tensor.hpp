// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "looplab/common.hpp"

namespace looplab::ad {

// Dense row-major tensor of doubles. Rank 1 and 2 cover everything the toy
// model needs; higher ranks are representable but no op produces them.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
    static Tensor full(std::vector<std::size_t> shape, double value);

    const std::vector<std::size_t> &shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    // 2-d accessors; rank is validated once at construction, not per call.
    std::size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
    std::size_t cols() const { return shape_.size() < 2 ? (shape_.empty() ? 0 : 1) : shape_[1]; }

    double &operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
    double &operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double *data() { return data_.data(); }
    const double *data() const { return data_.data(); }
    std::vector<double> &vec() { return data_; }
    const std::vector<double> &vec() const { return data_; }

    bool same_shape(const Tensor &other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    double max_abs() const;

    std::string shape_str() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t> &shape);

// C = A * B for A[m,k], B[k,n].
Tensor matmul(const Tensor &a, const Tensor &b);
// C = A * B^T for A[m,k], B[n,k].
Tensor matmul_bt(const Tensor &a, const Tensor &b);
// C = A^T * B for A[k,m], B[k,n].
Tensor matmul_at(const Tensor &a, const Tensor &b);

Tensor add(const Tensor &a, const Tensor &b);
Tensor sub(const Tensor &a, const Tensor &b);
Tensor scale(const Tensor &a, double c);
Tensor hadamard(const Tensor &a, const Tensor &b);

Tensor random_uniform(std::vector<std::size_t> shape, double lo, double hi, Rng &rng);
Tensor random_gaussian(std::vector<std::size_t> shape, double mean, double stddev, Rng &rng);

}  // namespace looplab::ad
