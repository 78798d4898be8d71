// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <vector>

#include "looplab/tensor.hpp"

namespace looplab::ad {

// Zero-variance rows are normalized through this epsilon.
inline constexpr double kLayerNormEps = 1e-5;
// Additive mask for future positions in attention scores.
inline constexpr double kCausalMaskValue = -1e9;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape. A tape is rebuilt per forward pass and is
// confined to one worker; independent tapes may run in parallel.
class Tape {
public:
    Tape() = default;
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;

    Var leaf(Tensor value, bool requires_grad = true);
    Var constant(Tensor value);

    Var matmul(Var a, Var b);
    Var matmul_bt(Var a, Var b);  // a * b^T
    Var add(Var a, Var b);
    Var add_row(Var a, Var row);  // a[m,n] + broadcast row[1,n]
    Var scale(Var a, double c);
    Var hadamard(Var a, Var b);
    Var gelu(Var a);
    Var layer_norm(Var x, Var gain, Var bias);
    Var softmax_rows(Var a);
    Var embedding(Var table, const std::vector<int> &ids);
    Var concat_rows(const std::vector<Var> &parts);
    Var concat_cols(const std::vector<Var> &parts);
    Var slice_rows(Var a, std::size_t r0, std::size_t r1);
    Var slice_cols(Var a, std::size_t c0, std::size_t c1);
    Var causal_mask(Var a);
    Var sum(Var a);
    // -sum_i sum_j target[i][j] * log softmax(logits[i])[j]; target rows must
    // be nonnegative and sum to 1 within 1e-9.
    Var cross_entropy(Var logits, const Tensor &target_dist);

    const Tensor &value(Var v) const;
    // Gradient of the last backward() loss w.r.t. v. Leaves created with
    // requires_grad=false still participate; their gradients are simply not
    // retained as meaningful outputs.
    const Tensor &grad(Var v) const;

    // Reverse accumulation from a scalar loss. Visits every node exactly once
    // (reverse creation order is a topological order for a define-by-run
    // graph); fan-out gradients accumulate additively.
    void backward(Var loss);

    std::size_t node_count() const { return nodes_.size(); }

private:
    enum class Op {
        Leaf,
        Const,
        MatMul,
        MatMulBT,
        Add,
        AddRow,
        Scale,
        Hadamard,
        Gelu,
        LayerNorm,
        SoftmaxRows,
        Embedding,
        ConcatRows,
        ConcatCols,
        SliceRows,
        SliceCols,
        CausalMask,
        Sum,
        CrossEntropy,
    };

    struct Node {
        Op op;
        std::vector<int> inputs;
        Tensor value;
        Tensor grad;
        double scalar = 0.0;
        std::size_t a0 = 0, a1 = 0;
        std::vector<int> ids;
        Tensor saved;   // op-dependent forward context
        Tensor saved2;  // second slot (layer-norm inv-std, CE target)
        bool requires_grad = false;
    };

    Var push(Node node);
    const Node &at(Var v) const;
    void backward_node(std::size_t i);

    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// Max over sampled coordinates of |analytic - numeric| / max(|numeric|, 1e-8),
// with numeric = central difference of f at the given step. Samples
// min(max_coords, point.size()) distinct coordinates.
double finite_diff_check(const std::function<double(const Tensor &)> &f, const Tensor &analytic_grad,
                         const Tensor &point, double step, std::size_t max_coords, Rng &rng);

}  // namespace looplab::ad
