// Copyright 2026 looplab Authors
// SPDX-License-Identifier: Apache-2.0

#include "looplab/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace looplab::ad {

namespace {

constexpr double kGeluC0 = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluC1 = 0.044715;

}  // namespace

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    ran_backward_ = false;
    return Var{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node &Tape::at(Var v) const {
    check(v.valid() && static_cast<std::size_t>(v.id) < nodes_.size(), "tape: invalid var");
    return nodes_[static_cast<std::size_t>(v.id)];
}

Var Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    return push(std::move(n));
}

Var Tape::constant(Tensor value) {
    Node n;
    n.op = Op::Const;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::matmul(Var a, Var b) {
    Node n;
    n.op = Op::MatMul;
    n.inputs = {a.id, b.id};
    n.value = ad::matmul(at(a).value, at(b).value);
    return push(std::move(n));
}

Var Tape::matmul_bt(Var a, Var b) {
    Node n;
    n.op = Op::MatMulBT;
    n.inputs = {a.id, b.id};
    n.value = ad::matmul_bt(at(a).value, at(b).value);
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) {
    Node n;
    n.op = Op::Add;
    n.inputs = {a.id, b.id};
    n.value = ad::add(at(a).value, at(b).value);
    return push(std::move(n));
}

Var Tape::add_row(Var a, Var row) {
    const Tensor &x = at(a).value;
    const Tensor &r = at(row).value;
    check(r.rows() == 1 && r.cols() == x.cols(),
          "add_row: shape mismatch " + x.shape_str() + " + " + r.shape_str());
    Node n;
    n.op = Op::AddRow;
    n.inputs = {a.id, row.id};
    n.value = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < x.cols(); ++j) n.value(i, j) += r[j];
    return push(std::move(n));
}

Var Tape::scale(Var a, double c) {
    Node n;
    n.op = Op::Scale;
    n.inputs = {a.id};
    n.scalar = c;
    n.value = ad::scale(at(a).value, c);
    return push(std::move(n));
}

Var Tape::hadamard(Var a, Var b) {
    Node n;
    n.op = Op::Hadamard;
    n.inputs = {a.id, b.id};
    n.value = ad::hadamard(at(a).value, at(b).value);
    return push(std::move(n));
}

Var Tape::gelu(Var a) {
    const Tensor &x = at(a).value;
    Node n;
    n.op = Op::Gelu;
    n.inputs = {a.id};
    n.value = x;
    for (double &v : n.value.vec()) {
        const double u = kGeluC0 * (v + kGeluC1 * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    return push(std::move(n));
}

Var Tape::layer_norm(Var xv, Var gain, Var bias) {
    const Tensor &x = at(xv).value;
    const Tensor &g = at(gain).value;
    const Tensor &b = at(bias).value;
    check(x.rank() == 2, "layer_norm: input must be rank-2, got " + x.shape_str());
    check(g.rows() == 1 && g.cols() == x.cols() && b.rows() == 1 && b.cols() == x.cols(),
          "layer_norm: affine shape mismatch " + x.shape_str() + " gain " + g.shape_str() + " bias " + b.shape_str());
    const std::size_t m = x.rows(), w = x.cols();
    Node n;
    n.op = Op::LayerNorm;
    n.inputs = {xv.id, gain.id, bias.id};
    n.value = Tensor({m, w});
    n.saved = Tensor({m, w});   // xhat
    n.saved2 = Tensor({m, 1});  // inv_std
    for (std::size_t i = 0; i < m; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < w; ++j) mean += x(i, j);
        mean /= static_cast<double>(w);
        double var = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            const double d = x(i, j) - mean;
            var += d * d;
        }
        var /= static_cast<double>(w);
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        n.saved2(i, 0) = inv;
        for (std::size_t j = 0; j < w; ++j) {
            const double xh = (x(i, j) - mean) * inv;
            n.saved(i, j) = xh;
            n.value(i, j) = xh * g[j] + b[j];
        }
    }
    return push(std::move(n));
}

Var Tape::softmax_rows(Var a) {
    const Tensor &x = at(a).value;
    check(x.rank() == 2, "softmax: input must be rank-2, got " + x.shape_str());
    Node n;
    n.op = Op::SoftmaxRows;
    n.inputs = {a.id};
    n.value = x;
    const std::size_t m = x.rows(), w = x.cols();
    for (std::size_t i = 0; i < m; ++i) {
        double mx = n.value(i, 0);
        for (std::size_t j = 1; j < w; ++j) mx = std::max(mx, n.value(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < w; ++j) {
            const double e = std::exp(n.value(i, j) - mx);
            n.value(i, j) = e;
            total += e;
        }
        for (std::size_t j = 0; j < w; ++j) n.value(i, j) /= total;
    }
    return push(std::move(n));
}

Var Tape::embedding(Var table, const std::vector<int> &ids) {
    const Tensor &t = at(table).value;
    check(t.rank() == 2, "embedding: table must be rank-2, got " + t.shape_str());
    Node n;
    n.op = Op::Embedding;
    n.inputs = {table.id};
    n.ids = ids;
    n.value = Tensor({ids.size(), t.cols()});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        check(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < t.rows(),
              "embedding: id " + std::to_string(ids[i]) + " out of range for table " + t.shape_str());
        for (std::size_t j = 0; j < t.cols(); ++j) n.value(i, j) = t(static_cast<std::size_t>(ids[i]), j);
    }
    return push(std::move(n));
}

Var Tape::concat_rows(const std::vector<Var> &parts) {
    check(!parts.empty(), "concat_rows: no inputs");
    std::size_t rows = 0;
    const std::size_t w = at(parts[0]).value.cols();
    for (Var p : parts) {
        const Tensor &t = at(p).value;
        check(t.cols() == w, "concat_rows: column mismatch " + t.shape_str());
        rows += t.rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.value = Tensor({rows, w});
    std::size_t r = 0;
    for (Var p : parts) {
        n.inputs.push_back(p.id);
        const Tensor &t = at(p).value;
        std::copy(t.data(), t.data() + t.size(), n.value.data() + r * w);
        r += t.rows();
    }
    return push(std::move(n));
}

Var Tape::concat_cols(const std::vector<Var> &parts) {
    check(!parts.empty(), "concat_cols: no inputs");
    const std::size_t m = at(parts[0]).value.rows();
    std::size_t cols = 0;
    for (Var p : parts) {
        const Tensor &t = at(p).value;
        check(t.rows() == m, "concat_cols: row mismatch " + t.shape_str());
        cols += t.cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.value = Tensor({m, cols});
    std::size_t c = 0;
    for (Var p : parts) {
        n.inputs.push_back(p.id);
        const Tensor &t = at(p).value;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < t.cols(); ++j) n.value(i, c + j) = t(i, j);
        c += t.cols();
    }
    return push(std::move(n));
}

Var Tape::slice_rows(Var a, std::size_t r0, std::size_t r1) {
    const Tensor &x = at(a).value;
    check(r0 <= r1 && r1 <= x.rows(),
          "slice_rows: range [" + std::to_string(r0) + "," + std::to_string(r1) + ") out of " + x.shape_str());
    Node n;
    n.op = Op::SliceRows;
    n.inputs = {a.id};
    n.a0 = r0;
    n.a1 = r1;
    n.value = Tensor({r1 - r0, x.cols()});
    std::copy(x.data() + r0 * x.cols(), x.data() + r1 * x.cols(), n.value.data());
    return push(std::move(n));
}

Var Tape::slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor &x = at(a).value;
    check(c0 <= c1 && c1 <= x.cols(),
          "slice_cols: range [" + std::to_string(c0) + "," + std::to_string(c1) + ") out of " + x.shape_str());
    Node n;
    n.op = Op::SliceCols;
    n.inputs = {a.id};
    n.a0 = c0;
    n.a1 = c1;
    n.value = Tensor({x.rows(), c1 - c0});
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = c0; j < c1; ++j) n.value(i, j - c0) = x(i, j);
    return push(std::move(n));
}

Var Tape::causal_mask(Var a) {
    const Tensor &x = at(a).value;
    check(x.rank() == 2 && x.rows() == x.cols(), "causal_mask: input must be square, got " + x.shape_str());
    Node n;
    n.op = Op::CausalMask;
    n.inputs = {a.id};
    n.value = x;
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = i + 1; j < x.cols(); ++j) n.value(i, j) += kCausalMaskValue;
    return push(std::move(n));
}

Var Tape::sum(Var a) {
    Node n;
    n.op = Op::Sum;
    n.inputs = {a.id};
    double s = 0.0;
    for (double v : at(a).value.vec()) s += v;
    n.value = Tensor({1, 1}, {s});
    return push(std::move(n));
}

Var Tape::cross_entropy(Var logits, const Tensor &target_dist) {
    const Tensor &l = at(logits).value;
    check(l.rank() == 2, "cross_entropy: logits must be rank-2, got " + l.shape_str());
    check(l.same_shape(target_dist),
          "cross_entropy: shape mismatch logits " + l.shape_str() + " target " + target_dist.shape_str());
    const std::size_t m = l.rows(), v = l.cols();
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            check(target_dist(i, j) >= 0.0, "cross_entropy: negative target probability");
            s += target_dist(i, j);
        }
        check(std::fabs(s - 1.0) <= 1e-9, "cross_entropy: target row " + std::to_string(i) + " sums to " + std::to_string(s));
    }
    Node n;
    n.op = Op::CrossEntropy;
    n.inputs = {logits.id};
    n.saved = Tensor({m, v});  // softmax probabilities
    n.saved2 = target_dist;
    double loss = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
        double mx = l(i, 0);
        for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, l(i, j));
        double total = 0.0;
        for (std::size_t j = 0; j < v; ++j) {
            const double e = std::exp(l(i, j) - mx);
            n.saved(i, j) = e;
            total += e;
        }
        const double log_total = std::log(total);
        for (std::size_t j = 0; j < v; ++j) {
            n.saved(i, j) /= total;
            if (target_dist(i, j) != 0.0) {
                // log softmax = (x - mx) - log(total), evaluated stably
                loss -= target_dist(i, j) * ((l(i, j) - mx) - log_total);
            }
        }
    }
    n.value = Tensor({1, 1}, {loss});
    return push(std::move(n));
}

const Tensor &Tape::value(Var v) const { return at(v).value; }

const Tensor &Tape::grad(Var v) const {
    check(ran_backward_, "tape: grad() before backward()");
    return at(v).grad;
}

void Tape::backward(Var loss) {
    const Node &ln = at(loss);
    check(ln.value.size() == 1, "backward: loss must be scalar, got " + ln.value.shape_str());
    for (Node &n : nodes_) {
        n.grad = Tensor(n.value.shape());
    }
    nodes_[static_cast<std::size_t>(loss.id)].grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        backward_node(i);
    }
    ran_backward_ = true;
}

void Tape::backward_node(std::size_t i) {
    Node &n = nodes_[i];
    auto in = [&](std::size_t k) -> Node & { return nodes_[static_cast<std::size_t>(n.inputs[k])]; };
    switch (n.op) {
        case Op::Leaf:
        case Op::Const:
            break;
        case Op::MatMul: {
            Node &a = in(0), &b = in(1);
            const Tensor da = ad::matmul_bt(n.grad, b.value);
            const Tensor db = ad::matmul_at(a.value, n.grad);
            for (std::size_t k = 0; k < da.size(); ++k) a.grad[k] += da[k];
            for (std::size_t k = 0; k < db.size(); ++k) b.grad[k] += db[k];
            break;
        }
        case Op::MatMulBT: {
            Node &a = in(0), &b = in(1);
            const Tensor da = ad::matmul(n.grad, b.value);
            const Tensor db = ad::matmul_at(n.grad, a.value);
            for (std::size_t k = 0; k < da.size(); ++k) a.grad[k] += da[k];
            for (std::size_t k = 0; k < db.size(); ++k) b.grad[k] += db[k];
            break;
        }
        case Op::Add: {
            Node &a = in(0), &b = in(1);
            for (std::size_t k = 0; k < n.grad.size(); ++k) {
                a.grad[k] += n.grad[k];
                b.grad[k] += n.grad[k];
            }
            break;
        }
        case Op::AddRow: {
            Node &a = in(0), &r = in(1);
            const std::size_t w = n.value.cols();
            for (std::size_t k = 0; k < n.grad.size(); ++k) {
                a.grad[k] += n.grad[k];
                r.grad[k % w] += n.grad[k];
            }
            break;
        }
        case Op::Scale: {
            Node &a = in(0);
            for (std::size_t k = 0; k < n.grad.size(); ++k) a.grad[k] += n.scalar * n.grad[k];
            break;
        }
        case Op::Hadamard: {
            Node &a = in(0), &b = in(1);
            for (std::size_t k = 0; k < n.grad.size(); ++k) {
                a.grad[k] += n.grad[k] * b.value[k];
                b.grad[k] += n.grad[k] * a.value[k];
            }
            break;
        }
        case Op::Gelu: {
            Node &a = in(0);
            for (std::size_t k = 0; k < n.grad.size(); ++k) {
                const double x = a.value[k];
                const double u = kGeluC0 * (x + kGeluC1 * x * x * x);
                const double t = std::tanh(u);
                const double du = kGeluC0 * (1.0 + 3.0 * kGeluC1 * x * x);
                a.grad[k] += n.grad[k] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
            }
            break;
        }
        case Op::LayerNorm: {
            Node &x = in(0), &g = in(1), &b = in(2);
            const std::size_t m = n.value.rows(), w = n.value.cols();
            for (std::size_t r = 0; r < m; ++r) {
                const double inv = n.saved2(r, 0);
                double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                for (std::size_t j = 0; j < w; ++j) {
                    const double dy = n.grad(r, j);
                    const double xh = n.saved(r, j);
                    const double dxh = dy * g.value[j];
                    sum_dxh += dxh;
                    sum_dxh_xh += dxh * xh;
                    g.grad[j] += dy * xh;
                    b.grad[j] += dy;
                }
                const double wd = static_cast<double>(w);
                for (std::size_t j = 0; j < w; ++j) {
                    const double xh = n.saved(r, j);
                    const double dxh = n.grad(r, j) * g.value[j];
                    x.grad(r, j) += (inv / wd) * (wd * dxh - sum_dxh - xh * sum_dxh_xh);
                }
            }
            break;
        }
        case Op::SoftmaxRows: {
            Node &a = in(0);
            const std::size_t m = n.value.rows(), w = n.value.cols();
            for (std::size_t r = 0; r < m; ++r) {
                double dot = 0.0;
                for (std::size_t j = 0; j < w; ++j) dot += n.grad(r, j) * n.value(r, j);
                for (std::size_t j = 0; j < w; ++j) a.grad(r, j) += (n.grad(r, j) - dot) * n.value(r, j);
            }
            break;
        }
        case Op::Embedding: {
            Node &t = in(0);
            const std::size_t w = n.value.cols();
            for (std::size_t r = 0; r < n.ids.size(); ++r) {
                double *dst = t.grad.data() + static_cast<std::size_t>(n.ids[r]) * w;
                const double *src = n.grad.data() + r * w;
                for (std::size_t j = 0; j < w; ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::ConcatRows: {
            std::size_t r = 0;
            const std::size_t w = n.value.cols();
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node &p = in(k);
                const std::size_t pr = p.value.rows();
                for (std::size_t idx = 0; idx < pr * w; ++idx) p.grad[idx] += n.grad[r * w + idx];
                r += pr;
            }
            break;
        }
        case Op::ConcatCols: {
            const std::size_t m = n.value.rows();
            std::size_t c = 0;
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                Node &p = in(k);
                const std::size_t pw = p.value.cols();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < pw; ++j) p.grad(i, j) += n.grad(i, c + j);
                c += pw;
            }
            break;
        }
        case Op::SliceRows: {
            Node &a = in(0);
            const std::size_t w = n.value.cols();
            for (std::size_t idx = 0; idx < n.grad.size(); ++idx) a.grad[n.a0 * w + idx] += n.grad[idx];
            break;
        }
        case Op::SliceCols: {
            Node &a = in(0);
            for (std::size_t i = 0; i < n.value.rows(); ++i)
                for (std::size_t j = 0; j < n.value.cols(); ++j) a.grad(i, n.a0 + j) += n.grad(i, j);
            break;
        }
        case Op::CausalMask: {
            Node &a = in(0);
            for (std::size_t k = 0; k < n.grad.size(); ++k) a.grad[k] += n.grad[k];
            break;
        }
        case Op::Sum: {
            Node &a = in(0);
            const double g = n.grad[0];
            for (std::size_t k = 0; k < a.grad.size(); ++k) a.grad[k] += g;
            break;
        }
        case Op::CrossEntropy: {
            Node &l = in(0);
            const double g = n.grad[0];
            for (std::size_t k = 0; k < l.grad.size(); ++k) l.grad[k] += g * (n.saved[k] - n.saved2[k]);
            break;
        }
    }
}

double finite_diff_check(const std::function<double(const Tensor &)> &f, const Tensor &analytic_grad,
                         const Tensor &point, double step, std::size_t max_coords, Rng &rng) {
    check(step > 0.0, "finite_diff_check: step must be positive");
    check(analytic_grad.same_shape(point), "finite_diff_check: gradient shape mismatch");
    std::vector<std::size_t> coords(point.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (max_coords < coords.size()) {
        std::shuffle(coords.begin(), coords.end(), rng);
        coords.resize(max_coords);
    }
    double max_rel = 0.0;
    Tensor probe = point;
    for (std::size_t c : coords) {
        const double orig = probe[c];
        probe[c] = orig + step;
        const double fp = f(probe);
        probe[c] = orig - step;
        const double fm = f(probe);
        probe[c] = orig;
        check(std::isfinite(fp) && std::isfinite(fm), "finite_diff_check: non-finite function value");
        const double numeric = (fp - fm) / (2.0 * step);
        const double rel = std::fabs(analytic_grad[c] - numeric) / std::max(std::fabs(numeric), 1e-8);
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace looplab::ad
